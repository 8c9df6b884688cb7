import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.activations import Activation, growth_bound
from ..core.config import CONDITION_CONFIG
from ..core.exceptions import DomainError
from ..core.models import CheckOutcome, ConditionReport, EocPoint, QuadratureConfig
from .eoc_service import EocSolver, eoc_solver
from .meanfield_service import MeanFieldEngine, meanfield_engine

logger = logging.getLogger(__name__)


class SupDeviation(NamedTuple):
    dev: float
    bound: float
    # f(0) = (sigma_b^2 + sigma_w^2 E[phi(sqrt(q) Z)]^2) / q; equals bound only when phi has zero Gaussian mean
    f_zero: float


class TailExponent(NamedTuple):
    beta: float
    x_low: float
    x_high: float
    truncated: bool


class ConditionChecker:
    """Numerical checks of the sufficient conditions for a good activation on the EOC"""

    def __init__(self, solver: EocSolver = eoc_solver, engine: MeanFieldEngine = meanfield_engine):
        self.solver = solver
        self.engine = engine

    def _check_shape(self, phi: Activation) -> CheckOutcome:
        at_zero = float(phi(np.zeros(1))[0])
        slopes = (phi.d1_at_zero_right, phi.d1_at_zero_left)
        if at_zero != 0.0:
            return CheckOutcome(False, None, f"phi(0) = {at_zero!r}")
        if not all(math.isfinite(s) for s in slopes):
            return CheckOutcome(False, None, f"one-sided derivatives at 0 not finite: {slopes}")
        k = growth_bound(phi)
        note = f"phi(0) = 0, phi'(0+) = {slopes[0]:g}, phi'(0-) = {slopes[1]:g}, |phi(x)/x| <= k"
        return CheckOutcome(math.isfinite(k), k, note)

    def _min_variance_slope(self, point: EocPoint, phi: Activation, size: int,
                            cfg: Optional[QuadratureConfig]) -> float:
        xs = np.linspace(0.0, 2.0 * point.q, size)[1:]
        return min(self.engine.variance_map_derivative(float(x), point.params, phi, cfg) for x in xs)

    def _min_curvature(self, point: EocPoint, phi: Activation, size: int,
                       cfg: Optional[QuadratureConfig]) -> Tuple[float, set]:
        xs = np.linspace(0.0, CONDITION_CONFIG['convex_x_max'], size)
        paths = set()
        lowest = math.inf
        for x in xs:
            value, path = self.engine.correlation_map_second_with_path(float(x), point.q, point.params, phi, cfg)
            paths.add(path)
            lowest = min(lowest, value)
        return lowest, paths

    def sup_deviation(self, phi: Activation, eoc_point: EocPoint,
                      x_grid_size: int = CONDITION_CONFIG['x_grid'],
                      cfg: Optional[QuadratureConfig] = None) -> SupDeviation:
        """max over [0, 1] of |f(x) - x|, with sigma_b^2 / q and f(0) for comparison.

        For convex f on the EOC the maximum sits at x = 0, so dev <= f(0).
        """
        if not eoc_point.found or not eoc_point.q > 0:
            raise DomainError("sup_deviation needs a solved EOC point with q > 0",
                              sigma_b=eoc_point.sigma_b, status=eoc_point.status.value)
        if x_grid_size < 2:
            raise DomainError(f"x_grid_size must be >= 2, got {x_grid_size}")
        p = eoc_point.params
        deviations = [abs(self.engine.correlation_map(float(x), eoc_point.q, p, phi, cfg) - x)
                      for x in np.linspace(0.0, 1.0, x_grid_size)]
        return SupDeviation(dev=float(max(deviations)), bound=p.sigma_b2 / eoc_point.q,
                            f_zero=float(deviations[0]))

    def check_prop4(self, phi: Activation, sigma_b_grid: Sequence[float],
                    x_grid_size: int = CONDITION_CONFIG['x_grid'],
                    cfg: Optional[QuadratureConfig] = None) -> ConditionReport:
        """Run conditions (i)-(iv) over an ascending sigma_b grid"""
        grid = [float(s) for s in sigma_b_grid]
        if not grid:
            raise DomainError("sigma_b grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("sigma_b grid must be strictly ascending")
        logger.info(f"Checking sufficient conditions for {phi.id} on {len(grid)} sigma_b values")

        tolerances = {
            'monotone_tol': CONDITION_CONFIG['monotone_tol'],
            'convex_tol': CONDITION_CONFIG['convex_tol'],
            'convex_x_max': CONDITION_CONFIG['convex_x_max'],
            'q_limit_factor': CONDITION_CONFIG['q_limit_factor'],
            'x_grid_size': x_grid_size,
        }
        try:
            cond_i = self._check_shape(phi)
        except DomainError as e:
            cond_i = CheckOutcome(False, None, e.message)
        report = ConditionReport(activation_id=phi.id, cond_i=cond_i, tolerances=tolerances)

        points = self.solver.eoc_curve(grid, phi, cfg)
        report.cond_ii = [(pt.sigma_b, pt.status.value) for pt in points]
        found = [pt for pt in points if pt.found and pt.q > 0]
        if not found:
            logger.warning(f"{phi.id}: no EOC point on the grid; conditions (iii) and (iv) skipped")
            return report

        slopes = [self._min_variance_slope(pt, phi, x_grid_size, cfg) for pt in found]
        report.cond_iii_monotone = CheckOutcome(
            min(slopes) >= CONDITION_CONFIG['monotone_tol'], min(slopes),
            "min F'(x) over x in (0, 2q] at every EOC point")

        report.cond_iii_qlimit = [(pt.sigma_b, pt.q) for pt in found]
        qs = [pt.q for pt in found]
        smallest = found[0]
        increasing = all(b > a for a, b in zip(qs, qs[1:]))
        limit = CONDITION_CONFIG['q_limit_factor'] * smallest.sigma_b
        report.cond_iii_qlimit_check = CheckOutcome(
            increasing and smallest.q < limit, smallest.q,
            f"q increases with sigma_b and q({smallest.sigma_b:g}) < {limit:g}")

        curvature = [self._min_curvature(pt, phi, x_grid_size, cfg) for pt in found]
        lowest = min(c[0] for c in curvature)
        paths = sorted(set().union(*(c[1] for c in curvature)))
        report.cond_iv_convex = CheckOutcome(
            lowest >= CONDITION_CONFIG['convex_tol'], lowest,
            f"min f''(x) over [0, {CONDITION_CONFIG['convex_x_max']}] (truncated below the singular end 1); "
            f"path: {', '.join(paths)}")

        for pt in found:
            dev = self.sup_deviation(phi, pt, x_grid_size, cfg)
            report.sup_dev.append((pt.sigma_b, dev.dev, dev.bound, dev.f_zero))

        logger.info(f"{phi.id}: all conditions passed = {report.all_passed}")
        return report

    def prop7_tail_exponent(self, phi: Activation, x_range: Tuple[float, float] = (10.0, 500.0),
                            points: int = 40, cfg: Optional[QuadratureConfig] = None) -> TailExponent:
        """Empirical beta with E[phi'(xZ)^2] ~ x^(-2 beta) over a log-spaced range"""
        lo, hi = float(x_range[0]), float(x_range[1])
        if not 1.0 < lo < hi < 1e3:
            raise DomainError(f"x_range must satisfy 1 < lo < hi < 1000, got {x_range}")
        xs = np.logspace(math.log10(lo), math.log10(hi), points)
        # phi'(xZ)^2 concentrates within a few units of the origin as x grows
        breaks = sorted(set(phi.kinks) | {0.0} | {s * 2.0 ** k for k in range(6) for s in (-1.0, 1.0)})
        values = np.array([self.engine.quad.expect1(lambda t: phi.d1(t) ** 2, float(x), cfg, kinks=breaks)
                           for x in xs])
        usable = values > 1e-300
        truncated = not bool(np.all(usable))
        if truncated:
            # only the leading run of positive values is kept
            stop = int(np.argmin(usable)) if usable[0] else 0
            if stop < 2:
                raise DomainError(f"E[phi'(xZ)^2] underflows on {x_range} for {phi.id}")
            xs, values = xs[:stop], values[:stop]
            logger.warning(f"tail range for {phi.id} truncated to [{xs[0]:g}, {xs[-1]:g}] (underflow)")
        slope = np.polyfit(np.log(xs), np.log(values), 1)[0]
        return TailExponent(beta=float(-slope / 2.0), x_low=float(xs[0]), x_high=float(xs[-1]), truncated=truncated)

    def smoothness_table(self, phis: Sequence[Activation], sigma_b_grid: Sequence[float],
                         cfg: Optional[QuadratureConfig] = None) -> List[Tuple[str, float, float, float, float]]:
        """Rows (activation, sigma_b, sigma_w, q, sigma_b^2 / q) along each EOC curve"""
        rows = []
        for phi in phis:
            for pt in self.solver.eoc_curve(sigma_b_grid, phi, cfg):
                if pt.found and pt.q > 0:
                    rows.append((phi.id, pt.sigma_b, pt.sigma_w, pt.q, pt.sigma_b ** 2 / pt.q))
        return rows


# Global condition checker instance
condition_checker = ConditionChecker()
