import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.activations import Activation
from ..core.config import FIXED_POINT_CONFIG, GRID_CONFIG
from ..core.exceptions import DomainError
from ..core.models import (DepthScales, FixedPointResult, FixedPointStatus, KernelState,
                           KernelTrajectory, MeanFieldParams, PropagationMode, QuadratureConfig)
from .closedform_service import relu_corr, relu_excess
from .quadrature_service import GaussianQuadrature, quadrature

logger = logging.getLogger(__name__)

_MIN_PANEL_WIDTH = 0.05


def _is_standard_relu(phi: Activation) -> bool:
    return phi.is_relu_like and phi.relu_like.lam == 1.0 and phi.relu_like.beta == 0.0


class MeanFieldEngine:
    """Variance map F, correlation map f, their derivatives and the layer recursion"""

    def __init__(self, quad: GaussianQuadrature = quadrature):
        self.quad = quad

    # ---- variance map -------------------------------------------------

    def variance_map(self, x: float, p: MeanFieldParams, phi: Activation,
                     cfg: Optional[QuadratureConfig] = None) -> float:
        """F(x) = sigma_b^2 + sigma_w^2 E[phi(sqrt(x) Z)^2]"""
        if x < 0 or not math.isfinite(x):
            raise DomainError(f"variance_map needs x >= 0, got {x}")
        second = self.quad.expect1(lambda t: phi.value(t) ** 2, math.sqrt(x), cfg, kinks=phi.kinks)
        return p.sigma_b2 + p.sigma_w2 * second

    def variance_map_derivative(self, x: float, p: MeanFieldParams, phi: Activation,
                                cfg: Optional[QuadratureConfig] = None, form: str = 'z') -> float:
        """F'(x) by Gaussian integration by parts.

        ``form='z'`` uses sigma_w^2 E[Z phi'(sqrt(x) Z) phi(sqrt(x) Z)] / sqrt(x), valid
        for kinked activations; ``form='stein'`` uses sigma_w^2 E[phi'^2 + phi'' phi].
        Both run on Legendre panels of width min(1, 1 / sqrt(x)) in z, so the
        Hermite order in ``cfg`` does not enter.
        """
        if x <= 0 or not math.isfinite(x):
            raise DomainError(f"variance_map_derivative needs x > 0, got {x}")
        r = math.sqrt(x)
        width = min(1.0, max(_MIN_PANEL_WIDTH, 1.0 / r))
        if form == 'stein':
            if not phi.has_d2:
                raise DomainError(f"{phi.id} has no classical second derivative; use form='z'")
            value = self.quad.expect1_panels(lambda t: phi.d1(t) ** 2 + phi.d2(t) * phi.value(t), r,
                                             kinks=phi.kinks, width=width)
            return p.sigma_w2 * value
        kinks = [k / r for k in phi.kinks]
        value = self.quad.expect1_panels(lambda z: z * phi.d1(r * z) * phi.value(r * z) / r, 1.0,
                                         kinks=kinks, width=width)
        return p.sigma_w2 * value

    def variance_fixed_point(self, p: MeanFieldParams, phi: Activation, x0: float,
                             cfg: Optional[QuadratureConfig] = None,
                             max_iters: int = FIXED_POINT_CONFIG['max_iters']) -> FixedPointResult:
        """Picard iteration x <- F(x) from x0"""
        if x0 < 0:
            raise DomainError(f"x0 must be >= 0, got {x0}")
        tol, guard = FIXED_POINT_CONFIG['tol'], FIXED_POINT_CONFIG['divergence']
        x = float(x0)
        for iteration in range(1, max_iters + 1):
            nxt = self.variance_map(x, p, phi, cfg)
            if not math.isfinite(nxt) or nxt > guard:
                logger.debug(f"variance iteration for {phi.id} diverged after {iteration} steps")
                return FixedPointResult(q=nxt, iters=iteration, status=FixedPointStatus.DIVERGED)
            if abs(nxt - x) < tol * (1.0 + x):
                return FixedPointResult(q=nxt, iters=iteration, status=FixedPointStatus.CONVERGED)
            x = nxt
        logger.debug(f"variance iteration for {phi.id} hit {max_iters} iterations at x = {x}")
        return FixedPointResult(q=x, iters=max_iters, status=FixedPointStatus.MAX_ITERS)

    def minimal_fixed_point(self, p: MeanFieldParams, phi: Activation,
                            cfg: Optional[QuadratureConfig] = None) -> FixedPointResult:
        """Least fixed point of F: iterate from just above 0 (F is non-decreasing)"""
        return self.variance_fixed_point(p, phi, FIXED_POINT_CONFIG['x0_minimal'], cfg)

    def variance_curve(self, p: MeanFieldParams, phi: Activation, x_grid: Sequence[float],
                       cfg: Optional[QuadratureConfig] = None) -> List[Tuple[float, float, float]]:
        """Rows (x, F(x), F'(x)); F' is reported as nan at x = 0"""
        rows = []
        for x in x_grid:
            derivative = self.variance_map_derivative(x, p, phi, cfg) if x > 0 else math.nan
            rows.append((float(x), self.variance_map(x, p, phi, cfg), derivative))
        return rows

    # ---- correlation map ------------------------------------------------

    def correlation_map(self, x: float, q: float, p: MeanFieldParams, phi: Activation,
                        cfg: Optional[QuadratureConfig] = None) -> float:
        """f(x) = (sigma_b^2 + sigma_w^2 E[phi(U1) phi(U2(x))]) / q"""
        if q <= 0:
            raise DomainError(f"correlation_map needs q > 0, got {q}")
        cross = self.quad.expect2(phi.value, phi.value, q, q, x, cfg,
                                  g_kinks=phi.kinks, h_kinks=phi.kinks)
        return (p.sigma_b2 + p.sigma_w2 * cross) / q

    def correlation_map_derivative(self, x: float, q: float, p: MeanFieldParams, phi: Activation,
                                   cfg: Optional[QuadratureConfig] = None) -> float:
        """f'(x) = sigma_w^2 E[phi'(U1) phi'(U2(x))]"""
        if q <= 0:
            raise DomainError(f"correlation_map_derivative needs q > 0, got {q}")
        return p.sigma_w2 * self.quad.expect2(phi.d1, phi.d1, q, q, x, cfg,
                                              g_kinks=phi.kinks, h_kinks=phi.kinks)

    def correlation_map_second_with_path(self, x: float, q: float, p: MeanFieldParams, phi: Activation,
                                         cfg: Optional[QuadratureConfig] = None) -> Tuple[float, str]:
        """f''(x) and the path that produced it: 'expectation' or 'finite_difference'"""
        if q <= 0:
            raise DomainError(f"correlation_map_second needs q > 0, got {q}")
        if x >= 1.0:
            raise DomainError(f"correlation_map_second needs x < 1, got {x}")
        if phi.has_d2:
            value = p.sigma_w2 * q * self.quad.expect2(phi.d2, phi.d2, q, q, x, cfg,
                                                       g_kinks=phi.kinks, h_kinks=phi.kinks)
            return value, 'expectation'
        h = min(GRID_CONFIG['fd_step'], 0.5 * (1.0 - x))
        upper = self.correlation_map_derivative(x + h, q, p, phi, cfg)
        lower = self.correlation_map_derivative(x - h, q, p, phi, cfg)
        logger.debug(f"f'' of {phi.id} at x = {x} by central difference of f' (h = {h})")
        return (upper - lower) / (2.0 * h), 'finite_difference'

    def correlation_map_second(self, x: float, q: float, p: MeanFieldParams, phi: Activation,
                               cfg: Optional[QuadratureConfig] = None) -> float:
        return self.correlation_map_second_with_path(x, q, p, phi, cfg)[0]

    def correlation_gap(self, gap: float, q: float, p: MeanFieldParams, phi: Activation,
                        cfg: Optional[QuadratureConfig] = None) -> float:
        """1 - f(1 - gap) for q a fixed point of F (so that f(1) = 1).

        Equal to sigma_w^2 / (2 q) E[(phi(U1) - phi(U2))^2]; no subtraction from 1.
        """
        if q <= 0:
            raise DomainError(f"correlation_gap needs q > 0, got {q}")
        if _is_standard_relu(phi):
            # f = sigma_b^2 / q + sigma_w^2 relu_corr / 2 with sigma_b^2 / q + sigma_w^2 / 2 = 1
            return 0.5 * p.sigma_w2 * (gap - relu_excess(gap))
        increment = self.quad.expect_sq_increment(phi.value, q, q, gap, cfg, kinks=phi.kinks)
        return p.sigma_w2 * increment / (2.0 * q)

    # ---- rates and depth scales ----------------------------------------

    def chi1(self, q: float, p: MeanFieldParams, phi: Activation,
             cfg: Optional[QuadratureConfig] = None) -> float:
        """sigma_w^2 E[phi'(sqrt(q) Z)^2]"""
        if q < 0:
            raise DomainError(f"chi1 needs q >= 0, got {q}")
        if q == 0:
            return p.sigma_w2 * 0.5 * (phi.d1_at_zero_right ** 2 + phi.d1_at_zero_left ** 2)
        return p.sigma_w2 * self.quad.expect1(lambda t: phi.d1(t) ** 2, math.sqrt(q), cfg, kinks=phi.kinks)

    def alpha(self, q: float, p: MeanFieldParams, phi: Activation,
              cfg: Optional[QuadratureConfig] = None) -> float:
        """chi1 + sigma_w^2 E[phi'' phi] = F'(q); the Z-form when phi'' is not a function"""
        if q < 0:
            raise DomainError(f"alpha needs q >= 0, got {q}")
        if q == 0:
            return self.chi1(0.0, p, phi, cfg)
        return self.variance_map_derivative(q, p, phi, cfg, form='stein' if phi.has_d2 else 'z')

    def depth_scales(self, q: float, p: MeanFieldParams, phi: Activation,
                     cfg: Optional[QuadratureConfig] = None) -> DepthScales:
        return DepthScales.from_rates(self.chi1(q, p, phi, cfg), self.alpha(q, p, phi, cfg))

    # ---- layer recursion -------------------------------------------------

    def _layer_step(self, state: KernelState, p: MeanFieldParams, phi: Activation,
                    cfg: Optional[QuadratureConfig]) -> KernelState:
        qa_next = self.variance_map(state.q_a, p, phi, cfg)
        qb_next = self.variance_map(state.q_b, p, phi, cfg)
        if _is_standard_relu(phi):
            root = math.sqrt(state.q_a * state.q_b)
            increment = (0.5 * (math.sqrt(state.q_a) - math.sqrt(state.q_b)) ** 2
                         + root * (state.gap - relu_excess(state.gap)))
        else:
            increment = self.quad.expect_sq_increment(phi.value, state.q_a, state.q_b, state.gap, cfg,
                                                      kinks=phi.kinks)
        norm = math.sqrt(qa_next * qb_next)
        # sqrt(qa' qb') - k' = sigma_w^2 / 2 E[(phi_a - phi_b)^2] - (sqrt(qa') - sqrt(qb'))^2 / 2
        numerator = 0.5 * p.sigma_w2 * increment - 0.5 * (math.sqrt(qa_next) - math.sqrt(qb_next)) ** 2
        gap = min(2.0, max(0.0, numerator / norm)) if norm > 0 else 0.0
        return KernelState(layer=state.layer + 1, q_a=qa_next, q_b=qb_next, c_ab=1.0 - gap, gap=gap)

    def iterate_kernel(self, initial: KernelState, depth: int, p: MeanFieldParams, phi: Activation,
                       mode: PropagationMode = PropagationMode.LAYERWISE,
                       cfg: Optional[QuadratureConfig] = None) -> KernelTrajectory:
        """Propagate (q_a, q_b, c_ab) for ``depth`` layers starting at ``initial``.

        Homogeneous mode holds q at the fixed point reached from initial.q_a and
        iterates c <- f(c).
        """
        if depth < 1:
            raise DomainError(f"depth must be >= 1, got {depth}")
        mode = PropagationMode(mode)
        guard = FIXED_POINT_CONFIG['divergence']

        if mode == PropagationMode.HOMOGENEOUS:
            fixed = self.variance_fixed_point(p, phi, initial.q_a, cfg)
            if not fixed.converged or fixed.q <= 0:
                raise DomainError(f"homogeneous propagation needs a converged q > 0 for {phi.id}",
                                  status=fixed.status.value, q=fixed.q)
            q = fixed.q
            state = KernelState(layer=initial.layer, q_a=q, q_b=q, c_ab=initial.c_ab, gap=initial.gap)
            states = [state]
            while len(states) < depth:
                gap = min(2.0, max(0.0, self.correlation_gap(state.gap, q, p, phi, cfg)))
                state = KernelState(layer=state.layer + 1, q_a=q, q_b=q, c_ab=1.0 - gap, gap=gap)
                states.append(state)
            return KernelTrajectory(states=tuple(states))

        states = [initial]
        while len(states) < depth:
            state = self._layer_step(states[-1], p, phi, cfg)
            if state.q_a > guard or state.q_b > guard:
                logger.warning(f"variance of {phi.id} diverged at layer {state.layer}; sequence truncated")
                return KernelTrajectory(states=tuple(states), status=FixedPointStatus.DIVERGED)
            states.append(state)
        return KernelTrajectory(states=tuple(states))

    # ---- contraction constants -----------------------------------------

    def m_phi_sup(self, phi: Activation, x_max: float = GRID_CONFIG['x_max'],
                  grid: int = GRID_CONFIG['sup_grid'], cfg: Optional[QuadratureConfig] = None) -> float:
        """sup_x E[|phi'(xZ)^2 + phi''(xZ) phi(xZ)|] over a grid of x in [0, x_max]"""
        if x_max <= 0 or grid < 2:
            raise DomainError("m_phi_sup needs x_max > 0 and grid >= 2", x_max=x_max, grid=grid)
        best = 0.0
        for x in np.linspace(0.0, x_max, grid):
            if x == 0.0:
                if phi.kinked:
                    continue
                value = abs(phi.d1(np.zeros(1))[0] ** 2 + phi.d2(np.zeros(1))[0] * phi.value(np.zeros(1))[0])
            elif phi.has_d2:
                value = self.quad.expect1(lambda t: np.abs(phi.d1(t) ** 2 + phi.d2(t) * phi.value(t)), x, cfg,
                                          kinks=phi.kinks)
            else:
                kinks = [k / x for k in phi.kinks]
                value = self.quad.expect1(lambda z: np.abs(z * phi.d1(x * z) * phi.value(x * z) / x), 1.0, cfg,
                                          kinks=kinks + [0.0])
            best = max(best, float(value))
        return best

    def c_phi_sup(self, phi: Activation, delta: float, q_max: float = GRID_CONFIG['q_max'],
                  grid: int = GRID_CONFIG['sup_grid'], cfg: Optional[QuadratureConfig] = None,
                  offsets: int = 5, correlations: int = 6) -> float:
        """sup E[|phi'(x Z1) phi'(y (c Z1 + sqrt(1 - c^2) Z2))|] over |x - y| <= delta, c in [0, 1]"""
        if q_max <= 0 or grid < 2 or delta < 0:
            raise DomainError("c_phi_sup needs q_max > 0, grid >= 2, delta >= 0",
                              q_max=q_max, grid=grid, delta=delta)
        abs_d1 = lambda t: np.abs(phi.d1(t))
        best = 0.0
        for x in np.linspace(0.0, q_max, grid):
            for y in np.unique(np.clip(x + np.linspace(-delta, delta, offsets), 0.0, None)):
                for c in np.linspace(0.0, 1.0, correlations):
                    value = self.quad.expect2(abs_d1, abs_d1, x * x, y * y, c, cfg,
                                              g_kinks=phi.kinks, h_kinks=phi.kinks)
                    best = max(best, value)
        return best

    def contraction_certificate(self, p: MeanFieldParams, phi: Activation, delta: float = 0.5,
                                grid: int = 50, cfg: Optional[QuadratureConfig] = None) -> Dict:
        """Which domains of convergence the contraction bounds certify for p"""
        m_phi = self.m_phi_sup(phi, grid=grid, cfg=cfg)
        c_phi = self.c_phi_sup(phi, delta, grid=grid, cfg=cfg)
        variance = m_phi > 0 and p.sigma_w2 < 1.0 / m_phi
        correlation = variance and c_phi > 0 and p.sigma_w2 < 1.0 / c_phi
        return {
            'activation': phi.id,
            'm_phi': m_phi,
            'c_phi': c_phi,
            'delta': delta,
            'variance_certified': bool(variance),
            'correlation_certified': bool(correlation),
        }


# Global mean-field engine instance
meanfield_engine = MeanFieldEngine()
