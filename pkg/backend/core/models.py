import math
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import QUADRATURE_CONFIG, MC_CONFIG
from .exceptions import ConfigurationError, DomainError


class FixedPointStatus(str, Enum):
    CONVERGED = 'converged'
    DIVERGED = 'diverged'
    MAX_ITERS = 'max_iters'


class EocStatus(str, Enum):
    EXACT = 'exact'
    NUMERIC = 'numeric'
    NOT_FOUND = 'not_found'


class PropagationMode(str, Enum):
    LAYERWISE = 'layerwise'
    HOMOGENEOUS = 'homogeneous'


@dataclass(frozen=True)
class QuadratureConfig:
    order: int = QUADRATURE_CONFIG['order']
    kink_split: bool = QUADRATURE_CONFIG['kink_split']

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 2:
            raise ConfigurationError(f"quadrature order must be an integer >= 2, got {self.order}")


@dataclass(frozen=True)
class McConfig:
    samples: int = MC_CONFIG['samples']
    seed: int = MC_CONFIG['seed']

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError(f"samples must be >= 1, got {self.samples}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class ReluLikeParams:
    """Slopes of a piecewise-linear activation: lam for x > 0, beta for x <= 0"""
    lam: float
    beta: float

    def __post_init__(self):
        if self.lam == 0 and self.beta == 0:
            raise DomainError("relu_like slopes (lambda, beta) must not both be zero")

    def to_dict(self) -> Dict:
        return {'lambda': self.lam, 'beta': self.beta}


@dataclass(frozen=True)
class MeanFieldParams:
    """Bias and weight variances (sigma_b^2, sigma_w^2)"""
    sigma_b2: float
    sigma_w2: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma_b2) and math.isfinite(self.sigma_w2)):
            raise DomainError("sigma_b2 and sigma_w2 must be finite",
                              sigma_b2=self.sigma_b2, sigma_w2=self.sigma_w2)
        if self.sigma_b2 < 0:
            raise DomainError(f"sigma_b2 must be >= 0, got {self.sigma_b2}")
        if self.sigma_w2 <= 0:
            raise DomainError(f"sigma_w2 must be > 0, got {self.sigma_w2}")

    @classmethod
    def from_sigmas(cls, sigma_b: float, sigma_w: float) -> 'MeanFieldParams':
        return cls(sigma_b2=float(sigma_b) ** 2, sigma_w2=float(sigma_w) ** 2)

    @property
    def sigma_b(self) -> float:
        return math.sqrt(self.sigma_b2)

    @property
    def sigma_w(self) -> float:
        return math.sqrt(self.sigma_w2)

    def to_dict(self) -> Dict:
        return {'sigma_b2': self.sigma_b2, 'sigma_w2': self.sigma_w2}


@dataclass(frozen=True)
class KernelState:
    """Per-layer variances of two inputs and their correlation.

    ``gap`` holds 1 - c_ab computed without cancellation; it defaults to
    ``1 - c_ab`` when the caller has nothing better.
    """
    layer: int
    q_a: float
    q_b: float
    c_ab: float
    gap: Optional[float] = None

    def __post_init__(self):
        if self.layer < 1:
            raise DomainError(f"layer must be >= 1, got {self.layer}")
        if self.q_a < 0 or self.q_b < 0:
            raise DomainError("variances must be non-negative", q_a=self.q_a, q_b=self.q_b)
        if abs(self.c_ab) > 1 + 1e-12:
            raise DomainError(f"correlation must lie in [-1, 1], got {self.c_ab}")
        object.__setattr__(self, 'c_ab', float(min(1.0, max(-1.0, self.c_ab))))
        if self.gap is None:
            object.__setattr__(self, 'gap', 1.0 - self.c_ab)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class KernelTrajectory:
    """Output of the kernel recursion; truncated when the variance diverges"""
    states: Tuple[KernelState, ...]
    status: FixedPointStatus = FixedPointStatus.CONVERGED

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, index):
        return self.states[index]

    @property
    def truncated(self) -> bool:
        return self.status == FixedPointStatus.DIVERGED


@dataclass(frozen=True)
class FixedPointResult:
    q: float
    iters: int
    status: FixedPointStatus

    @property
    def converged(self) -> bool:
        return self.status == FixedPointStatus.CONVERGED

    def to_dict(self) -> Dict:
        return {'q': self.q, 'iters': self.iters, 'status': self.status.value}


def depth_scale(rate: float) -> float:
    """-1/log(rate), infinite at rate 1 and undefined (nan) outside (0, 1]"""
    if abs(rate - 1.0) < 1e-9:
        return math.inf
    if rate <= 0 or rate > 1:
        return math.nan
    return -1.0 / math.log(rate)


@dataclass(frozen=True)
class DepthScales:
    chi1: float
    alpha: float
    eps_c: float
    eps_q: float

    @classmethod
    def from_rates(cls, chi1: float, alpha: float) -> 'DepthScales':
        return cls(chi1=chi1, alpha=alpha, eps_c=depth_scale(chi1), eps_q=depth_scale(alpha))

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class EocPoint:
    sigma_b: float
    sigma_w: float
    q: float
    chi1: float
    alpha: float
    eps_q: float
    eps_c: float
    status: EocStatus
    diagnostics: Dict = field(default_factory=dict, compare=False)

    @property
    def found(self) -> bool:
        return self.status != EocStatus.NOT_FOUND

    @property
    def params(self) -> MeanFieldParams:
        return MeanFieldParams.from_sigmas(self.sigma_b, self.sigma_w)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['status'] = self.status.value
        return data


@dataclass
class CheckOutcome:
    """A pass/fail verdict together with the number that decided it"""
    passed: bool
    value: Optional[float] = None
    note: str = ''

    def to_dict(self) -> Dict:
        return {'passed': bool(self.passed), 'value': self.value, 'note': self.note}


@dataclass
class ConditionReport:
    activation_id: str
    cond_i: CheckOutcome
    cond_ii: List[Tuple[float, str]] = field(default_factory=list)
    cond_iii_monotone: Optional[CheckOutcome] = None
    cond_iii_qlimit: List[Tuple[float, float]] = field(default_factory=list)
    cond_iii_qlimit_check: Optional[CheckOutcome] = None
    cond_iv_convex: Optional[CheckOutcome] = None
    sup_dev: List[Tuple[float, float, float, float]] = field(default_factory=list)
    tolerances: Dict = field(default_factory=dict)

    @property
    def cond_ii_passed(self) -> bool:
        return bool(self.cond_ii) and all(status != EocStatus.NOT_FOUND.value for _, status in self.cond_ii)

    @property
    def all_passed(self) -> bool:
        return (self.cond_i.passed and self.cond_ii_passed
                and self.cond_iii_monotone is not None and self.cond_iii_monotone.passed
                and self.cond_iii_qlimit_check is not None and self.cond_iii_qlimit_check.passed
                and self.cond_iv_convex is not None and self.cond_iv_convex.passed)

    def to_dict(self) -> Dict:
        return {
            'activation_id': self.activation_id,
            'cond_i': self.cond_i.to_dict(),
            'cond_ii': {
                'passed': self.cond_ii_passed,
                'points': [{'sigma_b': sb, 'status': st} for sb, st in self.cond_ii],
            },
            'cond_iii_monotone': _outcome(self.cond_iii_monotone),
            'cond_iii_qlimit': {
                'check': _outcome(self.cond_iii_qlimit_check),
                'table': [{'sigma_b': sb, 'q': q} for sb, q in self.cond_iii_qlimit],
            },
            'cond_iv_convex': _outcome(self.cond_iv_convex),
            'sup_dev': [{'sigma_b': sb, 'sup_dev': dev, 'bound': bound, 'f_zero': f_zero}
                        for sb, dev, bound, f_zero in self.sup_dev],
            'all_passed': self.all_passed,
            'tolerances': dict(self.tolerances),
        }


def _outcome(outcome: Optional[CheckOutcome]) -> Dict:
    if outcome is None:
        return {'passed': False, 'value': None, 'note': 'skipped'}
    return outcome.to_dict()


@dataclass(frozen=True)
class SimConfig:
    """Finite-width network: widths N_1..N_L, input dimension d, replications"""
    widths: Tuple[int, ...]
    input_dim: int
    params: MeanFieldParams
    activation: 'object'
    replications: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ConfigurationError("all widths must be >= 1", widths=str(self.widths))
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.replications < 1:
            raise ConfigurationError(f"replications must be >= 1, got {self.replications}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def depth(self) -> int:
        return len(self.widths)


@dataclass
class LayerMoments:
    layer: int
    q_a: float
    q_a_se: float
    q_b: float
    q_b_se: float
    c_ab: float
    c_ab_se: float


@dataclass
class SimResult:
    layers: List[LayerMoments]
    outputs: List[np.ndarray]
    aborted: List[int] = field(default_factory=list)

    @property
    def replications(self) -> int:
        return len(self.outputs)
