"""
Finite-width random networks: y^1 = W^1 a + B^1, y^l = W^l phi(y^(l-1)) + B^l
with W^l_ij ~ N(0, sigma_w^2 / N_(l-1)) and B^l_i ~ N(0, sigma_b^2).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..core.config import SIMULATION_CONFIG
from ..core.exceptions import DomainError, NumericError
from ..core.models import LayerMoments, MeanFieldParams, SimConfig, SimResult

logger = logging.getLogger(__name__)


class FieldGrid(NamedTuple):
    """Rectangular grid of 2-D inputs; fields are indexed [iy, ix]"""
    xs: np.ndarray
    ys: np.ndarray

    @classmethod
    def square(cls, lo: float, hi: float, n: int) -> 'FieldGrid':
        if n < 2 or not hi > lo:
            raise DomainError("grid needs hi > lo and n >= 2", lo=lo, hi=hi, n=n)
        axis = np.linspace(lo, hi, n)
        return cls(xs=axis, ys=axis.copy())

    @property
    def points(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def radii(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.hypot(gx, gy)


def input_scale(params: MeanFieldParams, input_dim: int, q1: float) -> float:
    """Squared norm an input needs for q^1 = sigma_b^2 + sigma_w^2 |a|^2 / d to equal q1"""
    if q1 < params.sigma_b2:
        raise DomainError(f"q1 = {q1} is below sigma_b^2 = {params.sigma_b2}")
    return (q1 - params.sigma_b2) * input_dim / params.sigma_w2


def normalize_inputs(inputs: Sequence[Sequence[float]], params: MeanFieldParams, q1: float) -> np.ndarray:
    """Rescale each input so that its first-layer variance equals q1"""
    arr = np.atleast_2d(np.asarray(inputs, dtype=float))
    target = math.sqrt(input_scale(params, arr.shape[1], q1))
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0) and target > 0:
        raise DomainError("a zero input cannot be rescaled to a positive variance")
    with np.errstate(invalid='ignore', divide='ignore'):
        scaled = np.where(norms[:, None] > 0, arr * (target / norms)[:, None], 0.0)
    return scaled


def input_pair(params: MeanFieldParams, input_dim: int, q1: float, c1: float) -> np.ndarray:
    """Two inputs with q^1_a = q^1_b = q1 and first-layer correlation c1"""
    if input_dim < 2:
        raise DomainError("input_pair needs input_dim >= 2")
    if q1 <= 0:
        raise DomainError(f"q1 must be > 0, got {q1}")
    norm2 = input_scale(params, input_dim, q1)
    inner = (c1 * q1 - params.sigma_b2) * input_dim / params.sigma_w2
    if norm2 == 0 or abs(inner) > norm2 * (1 + 1e-12):
        raise DomainError(f"(q1, c1) = ({q1}, {c1}) is not reachable with sigma_b^2 = {params.sigma_b2}")
    cos = max(-1.0, min(1.0, inner / norm2))
    a = np.zeros(input_dim)
    b = np.zeros(input_dim)
    a[0] = math.sqrt(norm2)
    b[0] = math.sqrt(norm2) * cos
    b[1] = math.sqrt(norm2) * math.sqrt(1.0 - cos * cos)
    return np.vstack([a, b])


class NetworkSimulator:
    def __init__(self, workers: int = SIMULATION_CONFIG['workers']):
        self.workers = workers

    @staticmethod
    def _generator(seed: int, replication: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replication])))

    def layer_preactivations(self, cfg: SimConfig, inputs: np.ndarray, replication: int = 0,
                             keep: str = 'all') -> List[np.ndarray]:
        """Pre-activations (N_l x n) of every layer, or only the last with keep='last'"""
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        if x.shape[1] != cfg.input_dim:
            raise DomainError(f"inputs have dimension {x.shape[1]}, expected {cfg.input_dim}")
        rng = self._generator(cfg.seed, replication)
        sigma_w, sigma_b = cfg.params.sigma_w, cfg.params.sigma_b
        phi = cfg.activation

        layers = []
        fan_in = cfg.input_dim
        signal = x.T
        for index, width in enumerate(cfg.widths):
            weights = rng.standard_normal((width, fan_in)) * (sigma_w / math.sqrt(fan_in))
            bias = rng.standard_normal((width, 1)) * sigma_b
            y = weights @ signal + bias
            if not np.all(np.isfinite(y)):
                raise NumericError(f"non-finite pre-activation in layer {index + 1}",
                                   layer=index + 1, replication=replication)
            if keep == 'all' or index == cfg.depth - 1:
                layers.append(y)
            signal = phi.value(y)
            fan_in = width
        return layers

    def _replicate(self, cfg: SimConfig, inputs: np.ndarray, replication: int) -> Optional[List[np.ndarray]]:
        try:
            return self.layer_preactivations(cfg, inputs, replication)
        except NumericError as e:
            logger.warning(f"Replication {replication} aborted: {e.message}")
            return None

    @staticmethod
    def _moments(y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-neuron squares for input a, b and products, pooled later"""
        ya = y[:, 0]
        yb = y[:, 1] if y.shape[1] > 1 else y[:, 0]
        return ya * ya, yb * yb, ya * yb

    def simulate(self, cfg: SimConfig, inputs: Sequence[Sequence[float]]) -> SimResult:
        """Propagate one or two inputs through cfg.replications fresh networks.

        Moments are pooled over neurons within a replication; standard errors come
        from the spread across replications (across neurons when there is only one).
        """
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        if x.size == 0:
            raise DomainError("inputs must be nonempty")
        if x.shape[1] != cfg.input_dim:
            raise DomainError(f"inputs have dimension {x.shape[1]}, expected {cfg.input_dim}")
        logger.info(f"Simulating {cfg.replications} replications of a depth-{cfg.depth} "
                    f"{cfg.activation.id} network")

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            runs = list(executor.map(lambda r: self._replicate(cfg, x, r), range(cfg.replications)))
        aborted = [r for r, run in enumerate(runs) if run is None]
        kept = [run for run in runs if run is not None]
        if not kept:
            raise NumericError("every replication aborted", replications=cfg.replications)

        layers = []
        for index in range(cfg.depth):
            per_rep = []
            neuron_level = []
            for run in kept:
                sq_a, sq_b, cross = self._moments(run[index])
                qa, qb, k = float(np.mean(sq_a)), float(np.mean(sq_b)), float(np.mean(cross))
                denom = math.sqrt(qa * qb)
                c = min(1.0, max(-1.0, k / denom)) if denom > 0 else 0.0
                per_rep.append((qa, qb, c))
                neuron_level.append((sq_a, sq_b))
            stats = np.asarray(per_rep)
            means = stats.mean(axis=0)
            if len(kept) >= 2:
                errors = stats.std(axis=0, ddof=1) / math.sqrt(len(kept))
            else:
                sq_a, sq_b = neuron_level[0]
                n = max(len(sq_a), 2)
                errors = np.array([np.std(sq_a, ddof=1) / math.sqrt(n) if len(sq_a) > 1 else math.nan,
                                   np.std(sq_b, ddof=1) / math.sqrt(n) if len(sq_b) > 1 else math.nan,
                                   math.nan])
            layers.append(LayerMoments(layer=index + 1, q_a=float(means[0]), q_a_se=float(errors[0]),
                                       q_b=float(means[1]), q_b_se=float(errors[1]),
                                       c_ab=float(means[2]), c_ab_se=float(errors[2])))
        outputs = [run[-1] for run in kept]
        logger.info(f"Simulation finished: {len(kept)} replications kept, {len(aborted)} aborted")
        return SimResult(layers=layers, outputs=outputs, aborted=aborted)

    def output_fields(self, cfg: SimConfig, grid: FieldGrid, replication: int = 0) -> np.ndarray:
        """Every final-layer neuron over the grid: shape (N_L, len(ys), len(xs))"""
        if cfg.input_dim != 2:
            raise DomainError(f"output fields need input_dim = 2, got {cfg.input_dim}")
        last = self.layer_preactivations(cfg, grid.points, replication, keep='last')[-1]
        return last.reshape(last.shape[0], len(grid.ys), len(grid.xs))

    def output_field(self, cfg: SimConfig, grid: FieldGrid, replication: int = 0) -> np.ndarray:
        """Scalar output (first final-layer neuron) over the grid"""
        return self.output_fields(cfg, grid, replication)[0]

    @staticmethod
    def _bins(grid: FieldGrid, bins: int) -> np.ndarray:
        radii = grid.radii.ravel()
        edges = np.linspace(0.0, radii.max(), bins + 1)
        return np.clip(np.digitize(radii, edges[1:-1]), 0, bins - 1)

    def radial_profile(self, field: np.ndarray, grid: FieldGrid,
                       bins: int = SIMULATION_CONFIG['radial_bins']) -> List[Tuple[float, float, float]]:
        """Rows (mean radius, mean output, stddev) per nonempty radius bin"""
        values = np.asarray(field, dtype=float).ravel()
        radii = grid.radii.ravel()
        labels = self._bins(grid, bins)
        rows = []
        for b in range(bins):
            mask = labels == b
            if np.any(mask):
                rows.append((float(radii[mask].mean()), float(values[mask].mean()), float(values[mask].std())))
        return rows

    def radial_ratio(self, fields: np.ndarray, grid: FieldGrid,
                     bins: int = SIMULATION_CONFIG['radial_bins']) -> Optional[float]:
        """Pooled within-bin stddev over across-bin stddev; None when the fields are constant"""
        stack = np.asarray(fields, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        labels = self._bins(grid, bins)
        within, across = [], []
        for field in stack:
            values = field.ravel()
            used = [b for b in range(bins) if np.any(labels == b)]
            means = np.array([values[labels == b].mean() for b in used])
            counts = np.array([np.sum(labels == b) for b in used])
            variances = np.array([values[labels == b].var() for b in used])
            within.append(np.sum(counts * variances) / counts.sum())
            across.append(np.average((means - np.average(means, weights=counts)) ** 2, weights=counts))
        within_sd, across_sd = math.sqrt(np.mean(within)), math.sqrt(np.mean(across))
        if across_sd <= 1e-12 * (1.0 + within_sd):
            return None
        return within_sd / across_sd

    def field_summary(self, fields: np.ndarray, grid: FieldGrid,
                      threshold: float = SIMULATION_CONFIG['almost_constant_threshold']) -> Dict:
        """Median relative range and stddev over neurons, pooled radial ratio"""
        stack = np.asarray(fields, dtype=float)
        if stack.ndim == 2:
            stack = stack[None]
        flat = stack.reshape(stack.shape[0], -1)
        spread = flat.max(axis=1) - flat.min(axis=1)
        centre = np.abs(flat.mean(axis=1))
        with np.errstate(divide='ignore', invalid='ignore'):
            relative = np.where(centre > 0, spread / centre, np.inf)
        median_relative = float(np.median(relative))
        return {
            'neurons': int(stack.shape[0]),
            'median_relative_range': median_relative,
            'median_field_std': float(np.median(flat.std(axis=1))),
            'radial_ratio': self.radial_ratio(stack, grid),
            'almost_constant': bool(median_relative < threshold),
            'almost_constant_threshold': threshold,
            'threshold_kind': 'operationalized: median over neurons of (max - min) / |mean| below threshold',
        }


# Global network simulator instance
network_simulator = NetworkSimulator()
