"""
Activation functions and their derivatives.

Every callable is vectorized over numpy arrays. At kinks ``d1`` reports the
right derivative; ``d2`` is ``None`` when the second derivative is not a
function (ReLU-like, Hard-Tanh).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from .config import GRID_CONFIG
from .exceptions import ConfigurationError, DomainError
from .models import ReluLikeParams

logger = logging.getLogger(__name__)

RealFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Activation:
    id: str
    value: RealFn = field(repr=False)
    d1: RealFn = field(repr=False)
    d2: Optional[RealFn] = field(default=None, repr=False)
    bounded: bool = False
    zero_at_zero: bool = True
    d1_at_zero_right: float = 1.0
    d1_at_zero_left: float = 1.0
    growth_bound_k: Optional[float] = None
    kinks: Tuple[float, ...] = ()
    odd: bool = False
    relu_like: Optional[ReluLikeParams] = None

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    @property
    def has_d2(self) -> bool:
        return self.d2 is not None

    @property
    def is_relu_like(self) -> bool:
        return self.relu_like is not None

    @property
    def kinked(self) -> bool:
        return bool(self.kinks)


def _relu_like(params: ReluLikeParams, name: str) -> Activation:
    lam, beta = float(params.lam), float(params.beta)
    return Activation(
        id=name,
        value=lambda x: np.where(x > 0, lam * x, beta * x),
        d1=lambda x: np.where(x >= 0, lam, beta) + 0.0 * x,
        d2=None,
        d1_at_zero_right=lam,
        d1_at_zero_left=beta,
        growth_bound_k=max(abs(lam), abs(beta)),
        kinks=(0.0,),
        odd=lam == beta,
        relu_like=params,
    )


def _tanh() -> Activation:
    def d1(x):
        t = np.tanh(x)
        return 1.0 - t * t

    def d2(x):
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)

    return Activation(id='tanh', value=np.tanh, d1=d1, d2=d2, bounded=True,
                      growth_bound_k=1.0, odd=True)


def _hard_tanh() -> Activation:
    return Activation(
        id='hard_tanh',
        value=lambda x: np.clip(x, -1.0, 1.0),
        d1=lambda x: np.where((x >= -1.0) & (x < 1.0), 1.0, 0.0),
        d2=None,
        bounded=True,
        growth_bound_k=1.0,
        kinks=(-1.0, 1.0),
        odd=True,
    )


def _swish() -> Activation:
    # expit branches on the sign of x, so nothing overflows for |x| > 700
    def d1(x):
        s = expit(x)
        return s + x * s * (1.0 - s)

    def d2(x):
        s = expit(x)
        return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))

    return Activation(id='swish', value=lambda x: x * expit(x), d1=d1, d2=d2,
                      d1_at_zero_right=0.5, d1_at_zero_left=0.5, growth_bound_k=1.0)


def _elu() -> Activation:
    # phi' is continuous at 0, phi'' jumps there: split integrals at 0 anyway
    return Activation(
        id='elu',
        value=lambda x: np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0))),
        d1=lambda x: np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0))),
        d2=lambda x: np.where(x >= 0, 0.0, np.exp(np.minimum(x, 0.0))),
        growth_bound_k=1.0,
        kinks=(0.0,),
    )


def _arctan() -> Activation:
    return Activation(
        id='arctan',
        value=np.arctan,
        d1=lambda x: 1.0 / (1.0 + x * x),
        d2=lambda x: -2.0 * x / (1.0 + x * x) ** 2,
        bounded=True,
        growth_bound_k=1.0,
        odd=True,
    )


def _linear() -> Activation:
    return Activation(
        id='linear',
        value=lambda x: np.asarray(x, dtype=float) * 1.0,
        d1=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        d2=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        growth_bound_k=1.0,
        odd=True,
    )


_BUILDERS: Dict[str, Callable[[], Activation]] = {
    'relu': lambda: _relu_like(ReluLikeParams(1.0, 0.0), 'relu'),
    'tanh': _tanh,
    'hard_tanh': _hard_tanh,
    'swish': _swish,
    'elu': _elu,
    'arctan': _arctan,
    'linear': _linear,
}

ACTIVATION_NAMES = ('relu', 'relu_like:<lambda>:<beta>', 'tanh', 'hard_tanh', 'swish', 'elu', 'arctan', 'linear')


def make_activation(name: str) -> Activation:
    """Build an activation from its CLI name (``relu_like:<lambda>:<beta>`` for ReLU-like)"""
    key = name.strip().lower()
    if key.startswith('relu_like'):
        parts = key.split(':')
        if len(parts) != 3:
            raise ConfigurationError(f"relu_like expects relu_like:<lambda>:<beta>, got {name!r}")
        try:
            lam, beta = float(parts[1]), float(parts[2])
        except ValueError:
            raise ConfigurationError(f"relu_like slopes must be numbers, got {name!r}")
        return _relu_like(ReluLikeParams(lam, beta), f"relu_like:{lam:g}:{beta:g}")
    if key not in _BUILDERS:
        raise ConfigurationError(f"Unknown activation {name!r}; expected one of {', '.join(ACTIVATION_NAMES)}",
                                 activation=name)
    return _BUILDERS[key]()


def growth_bound(phi: Activation, domain_half_width: float = GRID_CONFIG['growth_half_width'],
                 grid: int = 400_001) -> float:
    """sup |phi(x)/x| over a dense symmetric grid, with the one-sided slope limit at 0"""
    if not phi.zero_at_zero:
        raise DomainError(f"growth bound needs phi(0) = 0; {phi.id} does not vanish at 0")
    xs = np.linspace(-domain_half_width, domain_half_width, grid)
    xs = xs[xs != 0.0]
    ratio = np.abs(phi(xs) / xs)
    at_zero = max(abs(phi.d1_at_zero_right), abs(phi.d1_at_zero_left))
    k = float(max(np.max(ratio), at_zero))
    logger.debug(f"growth bound of {phi.id} on [-{domain_half_width}, {domain_half_width}]: {k}")
    return k
