"""
Edge-of-chaos solver.

sigma_w is bracketed on a log-spaced candidate grid and bisected on the
residual chi1(q(sigma_w)) - 1, with q the minimal fixed point of F and a
diverging fixed-point iteration counted on the r > 0 side. Two outcomes:

* the residual crosses zero on the minimal branch (Tanh, ELU): the point has
  chi1 = 1 and is reported with criterion 'chi1';
* the minimal branch folds before chi1 reaches 1 (Swish): beyond the fold the
  iteration diverges, so the bisection closes on the fold itself, where
  F(q) = q and F'(q) = 1. The fold is solved directly and reported with
  criterion 'fold' and its measured chi1 (below 1). The chi1 = 1 point on the
  unstable branch, from the variance identity, is kept in the diagnostics.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.activations import Activation, make_activation
from ..core.config import EOC_CONFIG, FIXED_POINT_CONFIG, SIMULATION_CONFIG
from ..core.exceptions import DomainError
from ..core.models import (DepthScales, EocPoint, EocStatus, FixedPointResult, MeanFieldParams,
                           QuadratureConfig, ReluLikeParams)
from .meanfield_service import MeanFieldEngine, meanfield_engine

logger = logging.getLogger(__name__)

# log-spaced q candidates for the variance-identity path
_Q_GRID = np.logspace(-10, 3, 131)
# F with sigma_b = 0, sigma_w = 1: E[phi(sqrt(x) Z)^2] and its derivative in x
_UNIT = MeanFieldParams(sigma_b2=0.0, sigma_w2=1.0)


class Endpoint(NamedTuple):
    sigma_w: float
    q: float
    residual: float


def _not_found(sigma_b: float, **diagnostics) -> EocPoint:
    return EocPoint(sigma_b=sigma_b, sigma_w=math.nan, q=math.nan, chi1=math.nan, alpha=math.nan,
                    eps_q=math.nan, eps_c=math.nan, status=EocStatus.NOT_FOUND, diagnostics=diagnostics)


class EocSolver:
    def __init__(self, engine: MeanFieldEngine = meanfield_engine,
                 workers: int = SIMULATION_CONFIG['workers']):
        self.engine = engine
        self.workers = workers

    # ---- residuals --------------------------------------------------------

    def _residual(self, sigma_w: float, sigma_b: float, phi: Activation,
                  cfg: Optional[QuadratureConfig]) -> Tuple[Optional[float], FixedPointResult]:
        """chi1(q(sigma_w)) - 1, or None when the minimal fixed point is not reached"""
        p = MeanFieldParams.from_sigmas(sigma_b, sigma_w)
        fixed = self.engine.minimal_fixed_point(p, phi, cfg)
        if not fixed.converged:
            return None, fixed
        return self.engine.chi1(fixed.q, p, phi, cfg) - 1.0, fixed

    def _endpoint(self, sigma_w: float, sigma_b: float, phi: Activation,
                  cfg: Optional[QuadratureConfig]) -> Optional[Endpoint]:
        r, fixed = self._residual(sigma_w, sigma_b, phi, cfg)
        return None if r is None else Endpoint(sigma_w, fixed.q, r)

    def _identity_terms(self, q: float, phi: Activation, cfg: Optional[QuadratureConfig]) -> Tuple[float, float]:
        """(E[phi(sqrt(q) Z)^2], E[phi'(sqrt(q) Z)^2])"""
        r = math.sqrt(q)
        second = self.engine.quad.expect1(lambda t: phi.value(t) ** 2, r, cfg, kinks=phi.kinks)
        slope = self.engine.quad.expect1(lambda t: phi.d1(t) ** 2, r, cfg, kinks=phi.kinks)
        return second, slope

    def variance_identity_residual(self, q: float, sigma_b: float, phi: Activation,
                                   cfg: Optional[QuadratureConfig] = None) -> float:
        """q - sigma_b^2 - E[phi^2] / E[phi'^2]; zero wherever F(q) = q and chi1 = 1 hold together"""
        if q <= 0:
            raise DomainError(f"variance identity needs q > 0, got {q}")
        second, slope = self._identity_terms(q, phi, cfg)
        if slope <= 0:
            return math.nan
        return q - sigma_b * sigma_b - second / slope

    def _tangency(self, q: float, sigma_b: float, phi: Activation, cfg: Optional[QuadratureConfig]) -> float:
        """Sign of F'(q) - 1 with sigma_w chosen so that F(q) = q"""
        second = self.engine.variance_map(q, _UNIT, phi, cfg)
        # same form as alpha, so alpha is 1 at the root
        slope = self.engine.alpha(q, _UNIT, phi, cfg)
        return (q - sigma_b * sigma_b) * slope - second

    # ---- point builders ---------------------------------------------------

    def _finish(self, sigma_b: float, sigma_w: float, q: float, phi: Activation,
                cfg: Optional[QuadratureConfig], criterion: str, diagnostics: Dict) -> EocPoint:
        p = MeanFieldParams.from_sigmas(sigma_b, sigma_w)
        scales = self.engine.depth_scales(q, p, phi, cfg)
        fixed_gap = abs(self.engine.variance_map(q, p, phi, cfg) - q)
        diagnostics.update({
            'criterion': criterion,
            'chi1_residual': scales.chi1 - 1.0,
            'alpha_residual': scales.alpha - 1.0,
            'fixed_point_residual': fixed_gap,
            'variance_identity_residual': self.variance_identity_residual(q, sigma_b, phi, cfg) if q > 0 else 0.0,
            'stable_fixed_point': scales.alpha < 1.0,
        })
        pinned = scales.chi1 if criterion == 'chi1' else scales.alpha
        if abs(pinned - 1.0) >= EOC_CONFIG['residual_tol'] or fixed_gap > 1e-9 * (1.0 + q):
            logger.warning(f"EOC candidate for {phi.id} at sigma_b = {sigma_b} failed verification "
                           f"({criterion}: rate - 1 = {pinned - 1.0:.3e}, |F(q) - q| = {fixed_gap:.3e})")
            return _not_found(sigma_b, reason='verification_failed', sigma_w_candidate=sigma_w,
                              q_candidate=q, **diagnostics)
        eps_c = math.inf if criterion == 'chi1' else scales.eps_c
        return EocPoint(sigma_b=sigma_b, sigma_w=sigma_w, q=q, chi1=scales.chi1, alpha=scales.alpha,
                        eps_q=scales.eps_q, eps_c=eps_c, status=EocStatus.NUMERIC, diagnostics=diagnostics)

    def _bracket(self, sigma_b: float, phi: Activation,
                 cfg: Optional[QuadratureConfig]) -> Tuple[Optional[Tuple[float, float, bool]], Dict]:
        """First sign change of the residual over the candidates: (lo, hi, hi_failed)"""
        candidates = np.logspace(math.log10(EOC_CONFIG['sigma_w_low']), math.log10(EOC_CONFIG['sigma_w_high']),
                                 EOC_CONFIG['candidates'])
        failed = []
        residuals = []
        for sigma_w in candidates:
            r, fixed = self._residual(float(sigma_w), sigma_b, phi, cfg)
            if r is None:
                failed.append({'sigma_w': float(sigma_w), 'status': fixed.status.value})
                logger.debug(f"sigma_w = {sigma_w:.6g}: fixed point {fixed.status.value}, treated as r > 0")
            else:
                logger.debug(f"sigma_w = {sigma_w:.6g}: q = {fixed.q:.6g}, chi1 - 1 = {r:.3e}")
            residuals.append(math.inf if r is None else r)
        diagnostics = {'failed_candidates': failed}

        for k in range(len(candidates) - 1):
            if residuals[k] < 0.0 <= residuals[k + 1]:
                return (float(candidates[k]), float(candidates[k + 1]), math.isinf(residuals[k + 1])), diagnostics
        diagnostics['reason'] = 'no_sign_change'
        return None, diagnostics

    def _bisect(self, lo: float, hi: float, hi_failed: bool, sigma_b: float, phi: Activation,
                cfg: Optional[QuadratureConfig], diagnostics: Dict) -> Tuple[float, float, bool]:
        """Shrink a bracketing pair; (lo, hi, hi_failed).

        Stops at the sigma_w tolerance, or at the coarser fold tolerance while
        the upper end is a diverging iteration.
        """
        failed = diagnostics['failed_candidates']
        while hi - lo > EOC_CONFIG['sigma_w_tol']:
            if hi_failed and hi - lo <= EOC_CONFIG['fold_sigma_w_tol']:
                break
            mid = 0.5 * (lo + hi)
            r, fixed = self._residual(mid, sigma_b, phi, cfg)
            if r is None:
                failed.append({'sigma_w': mid, 'status': fixed.status.value})
            if r is None or r >= 0.0:
                hi, hi_failed = mid, r is None
            else:
                lo = mid
        return lo, hi, hi_failed

    def _solve_fold(self, sigma_b: float, q_stable: float, phi: Activation,
                    cfg: Optional[QuadratureConfig]) -> Optional[Tuple[float, float]]:
        """(sigma_w, q) where the minimal branch ends: F(q) = q and F'(q) = 1, searched upward from q_stable"""
        floor = sigma_b * sigma_b
        lo, hi = q_stable, q_stable
        value = self._tangency(lo, sigma_b, phi, cfg)
        while value >= 0.0:
            lo = floor + 0.5 * (lo - floor)
            if lo - floor < 1e-14 * (1.0 + floor):
                return None
            value = self._tangency(lo, sigma_b, phi, cfg)
        while self._tangency(hi, sigma_b, phi, cfg) < 0.0:
            lo, hi = hi, hi * 1.05
            if hi > FIXED_POINT_CONFIG['divergence']:
                return None
        while hi - lo > 1e-14 * hi:
            mid = 0.5 * (lo + hi)
            if self._tangency(mid, sigma_b, phi, cfg) >= 0.0:
                hi = mid
            else:
                lo = mid
        q = 0.5 * (lo + hi)
        second = self.engine.variance_map(q, _UNIT, phi, cfg)
        if second <= 0:
            return None
        return math.sqrt((q - floor) / second), q

    def _solve_variance_identity(self, sigma_b: float, phi: Activation,
                                 cfg: Optional[QuadratureConfig]) -> Optional[Tuple[float, float]]:
        """Least q > 0 with q = sigma_b^2 + E[phi^2]/E[phi'^2]; (sigma_w, q) or None"""
        residual = lambda q: self.variance_identity_residual(q, sigma_b, phi, cfg)
        values = [residual(float(q)) for q in _Q_GRID]
        for k in range(len(_Q_GRID) - 1):
            if not (math.isfinite(values[k]) and math.isfinite(values[k + 1])):
                continue
            if values[k] < 0.0 <= values[k + 1]:
                lo, hi = math.log(_Q_GRID[k]), math.log(_Q_GRID[k + 1])
                while hi - lo > 1e-14:
                    mid = 0.5 * (lo + hi)
                    if residual(math.exp(mid)) >= 0.0:
                        hi = mid
                    else:
                        lo = mid
                q = math.exp(0.5 * (lo + hi))
                sigma_w = 1.0 / math.sqrt(self._identity_terms(q, phi, cfg)[1])
                if EOC_CONFIG['sigma_w_low'] <= sigma_w <= EOC_CONFIG['sigma_w_high']:
                    return sigma_w, q
                logger.debug(f"variance-identity root q = {q:.6g} gives sigma_w = {sigma_w:.6g} outside the bracket")
        return None

    # ---- public operations ------------------------------------------------

    def relu_like_eoc(self, params: ReluLikeParams, cfg: Optional[QuadratureConfig] = None) -> EocPoint:
        """Closed-form EOC (0, sqrt(2 / (lambda^2 + beta^2))) of a ReLU-like activation"""
        sigma_w = math.sqrt(2.0 / (params.lam ** 2 + params.beta ** 2))
        q = EOC_CONFIG['input_variance']
        phi = make_activation(f"relu_like:{params.lam!r}:{params.beta!r}")
        p = MeanFieldParams(sigma_b2=0.0, sigma_w2=sigma_w * sigma_w)
        # F(x) = x on the EOC, so chi1 = alpha = 1 in closed form
        numeric_chi1 = self.engine.chi1(q, p, phi, cfg)
        scales = DepthScales.from_rates(1.0, 1.0)
        return EocPoint(sigma_b=0.0, sigma_w=sigma_w, q=q, chi1=scales.chi1, alpha=scales.alpha,
                        eps_q=scales.eps_q, eps_c=scales.eps_c, status=EocStatus.EXACT,
                        diagnostics={'numeric_chi1_residual': numeric_chi1 - 1.0,
                                     'q_convention': 'input_variance', 'relu_like': params.to_dict()})

    def eoc_solve(self, sigma_b: float, phi: Activation, cfg: Optional[QuadratureConfig] = None) -> EocPoint:
        """sigma_w (and the induced q) where the minimal-branch residual chi1 - 1 changes sign"""
        if sigma_b < 0 or not math.isfinite(sigma_b):
            raise DomainError(f"sigma_b must be >= 0, got {sigma_b}")
        sigma_b = float(sigma_b)
        if phi.is_relu_like:
            if sigma_b == 0.0:
                return self.relu_like_eoc(phi.relu_like, cfg)
            logger.info(f"{phi.id}: the EOC is the single point sigma_b = 0; nothing at sigma_b = {sigma_b}")
            return _not_found(sigma_b, reason='relu_like_singleton')

        logger.info(f"Solving EOC for {phi.id} at sigma_b = {sigma_b}")
        bracket, diagnostics = self._bracket(sigma_b, phi, cfg)
        if bracket is None:
            logger.info(f"EOC {phi.id}: no sign change at sigma_b = {sigma_b}")
            return _not_found(sigma_b, **diagnostics)

        lo, hi, hi_failed = self._bisect(*bracket, sigma_b, phi, cfg, diagnostics)
        diagnostics['bisection_interval'] = [lo, hi]
        lower = self._endpoint(lo, sigma_b, phi, cfg)
        upper = None if hi_failed else self._endpoint(hi, sigma_b, phi, cfg)
        if lower is None:
            diagnostics['reason'] = 'bracket_without_fixed_point'
            return _not_found(sigma_b, **diagnostics)

        root = min((e for e in (lower, upper) if e is not None), key=lambda e: abs(e.residual))
        if abs(root.residual) < EOC_CONFIG['residual_tol']:
            point = self._finish(sigma_b, root.sigma_w, root.q, phi, cfg, 'chi1',
                                 {**diagnostics, 'path': 'minimal_fixed_point'})
            if point.found:
                logger.info(f"EOC {phi.id}: sigma_b = {sigma_b}, sigma_w = {point.sigma_w:.9f}, q = {point.q:.6g}")
            return point

        # chi1 is still below 1 where the minimal branch ends
        fold = self._solve_fold(sigma_b, lower.q, phi, cfg)
        if fold is None:
            diagnostics['reason'] = 'fold_not_resolved'
            return _not_found(sigma_b, **diagnostics)
        identity = self._solve_variance_identity(sigma_b, phi, cfg)
        diagnostics['variance_identity'] = None if identity is None else {'sigma_w': identity[0], 'q': identity[1]}
        point = self._finish(sigma_b, fold[0], fold[1], phi, cfg, 'fold', {**diagnostics, 'path': 'fold'})
        if point.found:
            logger.info(f"EOC {phi.id}: sigma_b = {sigma_b}, sigma_w = {point.sigma_w:.9f}, q = {point.q:.6g} "
                        f"(fold of the minimal branch, chi1 = {point.chi1:.6f})")
        return point

    def eoc_curve(self, sigma_b_grid: Sequence[float], phi: Activation,
                  cfg: Optional[QuadratureConfig] = None) -> List[EocPoint]:
        """eoc_solve over an ascending grid, with monotonicity diagnostics on every point"""
        grid = [float(s) for s in sigma_b_grid]
        if not grid:
            raise DomainError("sigma_b grid must be nonempty")
        if any(s < 0 for s in grid) or any(b < a for a, b in zip(grid, grid[1:])):
            raise DomainError("sigma_b grid must be non-negative and sorted ascending")

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            points = list(executor.map(lambda s: self.eoc_solve(s, phi, cfg), grid))

        found = [pt for pt in points if pt.found]
        sigma_w_monotone = all(b.sigma_w <= a.sigma_w for a, b in zip(found, found[1:]))
        q_monotone = all(b.q >= a.q for a, b in zip(found, found[1:]))
        if not sigma_w_monotone:
            logger.warning(f"EOC curve of {phi.id}: sigma_w is not non-increasing in sigma_b")
        curve = {'sigma_w_non_increasing': sigma_w_monotone, 'q_non_decreasing': q_monotone,
                 'found': len(found), 'requested': len(points)}
        return [replace(pt, diagnostics={**pt.diagnostics, 'curve': curve}) for pt in points]


# Global EOC solver instance
eoc_solver = EocSolver()
