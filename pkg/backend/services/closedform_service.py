"""
Closed-form kernels: the ReLU correlation map on the edge of chaos, its
expansion at 1 and rate constant, and the Hard-Tanh variance map / f''.
"""

import logging
import math
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, ndtr

from ..core.exceptions import DomainError
from ..core.models import MeanFieldParams

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

# f(x) = x + RELU_TAYLOR_COEFF (1 - x)^{3/2} + O((1 - x)^{5/2}) near x = 1
RELU_TAYLOR_COEFF = 2.0 * math.sqrt(2.0) / (3.0 * math.pi)
# below this gap the leading Taylor term replaces relu_corr(x) - x
RELU_TAYLOR_SWITCH = 1e-6
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_array(x: ArrayLike, low: float, high: float, name: str, open_high: bool = False):
    arr = np.asarray(x, dtype=float)
    bad = (arr < low - 1e-12) | (arr >= high if open_high else arr > high + 1e-12) | ~np.isfinite(arr)
    if np.any(bad):
        value = float(arr[bad].flat[0]) if arr.ndim else float(arr)
        raise DomainError(f"{name}: argument {value} outside its domain", x=value)
    return np.clip(arr, low, high)


def _out(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def relu_corr(x: ArrayLike):
    """Correlation map of ReLU at (sigma_b^2, sigma_w^2) = (0, 2)"""
    x = _as_array(x, -1.0, 1.0, 'relu_corr')
    return _out((x * np.arcsin(x) + np.sqrt((1.0 - x) * (1.0 + x))) / math.pi + 0.5 * x)


def relu_corr_prime(x: ArrayLike):
    x = _as_array(x, -1.0, 1.0, 'relu_corr_prime')
    return _out(np.arcsin(x) / math.pi + 0.5)


def relu_corr_second(x: ArrayLike):
    x = _as_array(x, -1.0, 1.0, 'relu_corr_second', open_high=True)
    if np.any(x <= -1.0):
        raise DomainError("relu_corr_second is singular at x = -1")
    return _out(1.0 / (math.pi * np.sqrt((1.0 - x) * (1.0 + x))))


def relu_gap_taylor(x: float) -> float:
    """Leading term of relu_corr(x) - x near x = 1"""
    if x > 1.0 + 1e-12:
        raise DomainError(f"relu_gap_taylor needs x <= 1, got {x}")
    return RELU_TAYLOR_COEFF * max(0.0, 1.0 - x) ** 1.5


def relu_excess(gap: float) -> float:
    """relu_corr(1 - gap) - (1 - gap), with the Taylor term for tiny gaps.

    Parameterized by the gap so that gaps far below machine epsilon of
    the correlation keep their precision.
    """
    if gap < 0 or gap > 2:
        raise DomainError(f"gap must lie in [0, 2], got {gap}")
    if gap < RELU_TAYLOR_SWITCH:
        return RELU_TAYLOR_COEFF * gap ** 1.5
    x = 1.0 - gap
    return relu_corr(x) - x


def relu_rate_constant() -> float:
    """lim l^2 (1 - c^l) for ReLU on the edge of chaos"""
    return 9.0 * math.pi ** 2 / 2.0


def relu_rate_profile(depth: int, c0: float = 0.1) -> List[Tuple[int, float, float]]:
    """Iterate c <- relu_corr(c) from c^1 = c0; rows (l, 1 - c^l, l^2 (1 - c^l)).

    The recursion runs on the gap g = 1 - c, so l = 1e5 keeps full precision.
    """
    if depth < 1:
        raise DomainError(f"depth must be >= 1, got {depth}")
    if not -1.0 <= c0 < 1.0:
        raise DomainError(f"c0 must lie in [-1, 1), got {c0}")
    gap = 1.0 - c0
    rows = []
    for layer in range(1, depth + 1):
        rows.append((layer, gap, layer * layer * gap))
        gap = gap - relu_excess(gap)
    logger.info(f"ReLU rate after {depth} layers: l^2 (1 - c^l) = {rows[-1][2]:.6f} "
                f"(limit {relu_rate_constant():.6f})")
    return rows


class HardTanhVariance(NamedTuple):
    paper: float
    exact: float


def hardtanh_second_moment(x: float) -> float:
    """E[HT(sqrt(x) Z)^2] by piecewise integration of the Gaussian"""
    if x <= 0:
        raise DomainError(f"hardtanh variance needs x > 0, got {x}")
    c = 1.0 / math.sqrt(x)
    return float(2.0 * ndtr(-c) + x * erf(c / math.sqrt(2.0))
                 - 2.0 * math.sqrt(x) * _INV_SQRT_2PI * math.exp(-0.5 * c * c))


def hardtanh_variance_map(x: float, p: MeanFieldParams) -> HardTanhVariance:
    """Hard-Tanh variance map: the commonly displayed closed form and the exact integral"""
    if x <= 0:
        raise DomainError(f"hardtanh_variance_map needs x > 0, got {x}")
    displayed = 1.0 - (2.0 / math.sqrt(x)) * math.exp(-1.0 / x) * _INV_SQRT_2PI
    return HardTanhVariance(
        paper=p.sigma_b2 + p.sigma_w2 * displayed,
        exact=p.sigma_b2 + p.sigma_w2 * hardtanh_second_moment(x),
    )


def hardtanh_chi1(q: float, sigma_w2: float) -> float:
    """sigma_w^2 E[HT'(sqrt(q) Z)^2] = sigma_w^2 (2 Phi(1/sqrt(q)) - 1)"""
    if q <= 0:
        raise DomainError(f"hardtanh_chi1 needs q > 0, got {q}")
    return float(sigma_w2 * erf(1.0 / math.sqrt(2.0 * q)))


def hardtanh_f_second(x: float, q: float, sigma_w2: float) -> float:
    if x >= 1.0 or x <= -1.0:
        raise DomainError(f"hardtanh_f_second needs |x| < 1, got {x}")
    if q <= 0:
        raise DomainError(f"hardtanh_f_second needs q > 0, got {q}")
    return sigma_w2 / (math.pi * math.sqrt((1.0 - x) * (1.0 + x))) * (
        math.exp(-1.0 / (q * (1.0 + x))) - math.exp(-1.0 / (q * (1.0 - x))))
