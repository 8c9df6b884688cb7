"""
Gaussian expectations E[g(sZ)] and E[g(Z1) h(c Z1 + sqrt(1-c^2) Z2)].

Smooth integrands use probabilists' Gauss-Hermite nodes (Golub-Welsch,
cached per order). Integrands with kinks are split at the kinks and each
piece is integrated by Gauss-Legendre against the explicit Gaussian density
on [-12, 12]; in two dimensions the inner kink is located per outer node.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import eigh_tridiagonal

from ..core.config import QUADRATURE_CONFIG
from ..core.exceptions import DomainError, NumericError
from ..core.models import McConfig, QuadratureConfig

logger = logging.getLogger(__name__)

RealFn = Callable[[np.ndarray], np.ndarray]

_TRUNCATION = QUADRATURE_CONFIG['truncation']
_LEGENDRE_ORDER = QUADRATURE_CONFIG['legendre_order']
_DEGENERATE_TOL = QUADRATURE_CONFIG['degenerate_corr_tol']
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=16)
def hermite_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with sum(w * g(z)) ~ E[g(Z)], Z standard normal.

    Golub-Welsch: the nodes are the eigenvalues of the Jacobi matrix of the
    probabilists' Hermite recurrence, the weights the squared first
    components of its eigenvectors.
    """
    off_diagonal = np.sqrt(np.arange(1, order, dtype=float))
    nodes, vectors = eigh_tridiagonal(np.zeros(order), off_diagonal)
    weights = vectors[0, :] ** 2
    # exact symmetry keeps odd integrands at zero
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=4)
def legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def split_rule(breaks: np.ndarray, order: int = _LEGENDRE_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian rule on [-T, T] split at ``breaks`` (last axis; leading axes are batched).

    Breaks outside the truncation window collapse to empty segments.
    """
    t, w = legendre_rule(order)
    breaks = np.clip(np.sort(np.atleast_1d(breaks), axis=-1), -_TRUNCATION, _TRUNCATION)
    lead = breaks.shape[:-1]
    edges = np.concatenate([np.full(lead + (1,), -_TRUNCATION), breaks,
                            np.full(lead + (1,), _TRUNCATION)], axis=-1)
    lo, hi = edges[..., :-1], edges[..., 1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[..., None] + half[..., None] * t
    weights = half[..., None] * w * np.exp(-0.5 * nodes * nodes) * _INV_SQRT_2PI
    shape = lead + (nodes.shape[-2] * nodes.shape[-1],)
    return nodes.reshape(shape), weights.reshape(shape)


def _kink_positions(kinks: Sequence[float], scale: float) -> np.ndarray:
    return np.asarray([k / scale for k in kinks], dtype=float)


def _check_finite(values: np.ndarray, nodes: np.ndarray, what: str):
    bad = ~np.isfinite(values)
    if np.any(bad):
        node = float(np.broadcast_to(nodes, values.shape)[bad].flat[0])
        logger.error(f"Non-finite {what} at quadrature node z = {node!r}")
        raise NumericError(f"non-finite {what} at quadrature node z = {node!r}", node=node)


class GaussianQuadrature:
    def __init__(self, cfg: Optional[QuadratureConfig] = None):
        self.cfg = cfg or QuadratureConfig()

    def _config(self, cfg: Optional[QuadratureConfig]) -> QuadratureConfig:
        return cfg or self.cfg

    def rule(self, kinks_z: Sequence[float] = (), cfg: Optional[QuadratureConfig] = None):
        """1-D rule for E[k(Z)] where k has kinks at the given standard-normal positions"""
        cfg = self._config(cfg)
        if cfg.kink_split and len(kinks_z):
            return split_rule(np.asarray(kinks_z, dtype=float))
        return hermite_rule(cfg.order)

    def expect1(self, g: RealFn, scale: float, cfg: Optional[QuadratureConfig] = None,
                kinks: Sequence[float] = ()) -> float:
        """E[g(scale * Z)]; ``kinks`` are the points of non-smoothness of g"""
        if scale < 0 or not math.isfinite(scale):
            raise DomainError(f"scale must be a finite non-negative number, got {scale}")
        if scale == 0:
            value = np.atleast_1d(g(np.zeros(1)))
            _check_finite(value, np.zeros(1), 'integrand')
            return float(value[0])
        z, w = self.rule(_kink_positions(kinks, scale), cfg)
        values = g(scale * z)
        _check_finite(values, z, 'integrand')
        return float(np.dot(w, values))

    def expect1_panels(self, g: RealFn, scale: float, kinks: Sequence[float] = (),
                       width: float = 1.0) -> float:
        """E[g(scale * Z)] on Gauss-Legendre panels of the given width in z, also split at the kinks.

        Gauss-Hermite converges slowly when g has complex singularities close
        to the real axis (tanh, arctan and their derivatives at large scale);
        panels narrower than that distance do not.
        """
        if scale <= 0 or not math.isfinite(scale):
            raise DomainError(f"scale must be a finite positive number, got {scale}")
        if not width > 0:
            raise DomainError(f"panel width must be positive, got {width}")
        panels = np.arange(-_TRUNCATION + width, _TRUNCATION, width)
        z, w = split_rule(np.concatenate([panels, _kink_positions(kinks, scale)]))
        values = g(scale * z)
        _check_finite(values, z, 'integrand')
        return float(np.dot(w, values))

    def expect2(self, g: RealFn, h: RealFn, qa: float, qb: float, c: float,
                cfg: Optional[QuadratureConfig] = None,
                g_kinks: Sequence[float] = (), h_kinks: Sequence[float] = ()) -> float:
        """E[g(sqrt(qa) Z1) h(sqrt(qb) (c Z1 + sqrt(1 - c^2) Z2))]"""
        cfg = self._config(cfg)
        if qa < 0 or qb < 0:
            raise DomainError("variances must be non-negative", qa=qa, qb=qb)
        if abs(c) > 1 + 1e-12 or not math.isfinite(c):
            raise DomainError(f"correlation must lie in [-1, 1], got {c}")
        c = min(1.0, max(-1.0, float(c)))
        ra, rb = math.sqrt(qa), math.sqrt(qb)

        if 1.0 - abs(c) < _DEGENERATE_TOL:
            sign = 1.0 if c > 0 else -1.0
            kinks = [k / ra for k in g_kinks if ra > 0] + [sign * k / rb for k in h_kinks if rb > 0]
            return self.expect1(lambda z: g(ra * z) * h(sign * rb * z), 1.0, cfg, kinks=kinks)
        if rb == 0:
            h0 = float(np.atleast_1d(h(np.zeros(1)))[0])
            return h0 * self.expect1(g, ra, cfg, kinks=g_kinks)

        s = math.sqrt((1.0 - c) * (1.0 + c))
        z1, w1 = self.rule(_kink_positions(g_kinks, ra) if ra > 0 else (), cfg)
        outer = g(ra * z1)
        _check_finite(outer, z1, 'outer integrand')

        if cfg.kink_split and len(h_kinks):
            # h(rb (c z1 + s z2)) is kinked where z2 = (k / rb - c z1) / s
            breaks = (np.asarray(h_kinks, dtype=float)[None, :] / rb - c * z1[:, None]) / s
            z2, w2 = split_rule(breaks)
        else:
            z2, w2 = hermite_rule(cfg.order)
            z2, w2 = z2[None, :], w2[None, :]
        inner_values = h(rb * (c * z1[:, None] + s * z2))
        _check_finite(inner_values, z2, 'inner integrand')
        inner = np.sum(w2 * inner_values, axis=1)
        return float(np.dot(w1, outer * inner))

    def expect_sq_increment(self, phi: RealFn, qa: float, qb: float, gap: float,
                            cfg: Optional[QuadratureConfig] = None,
                            kinks: Sequence[float] = ()) -> float:
        """E[(phi(Ua) - phi(Ub))^2] for correlation c = 1 - gap, without forming c.

        Ua = sqrt(qa) Z1 and Ub = sqrt(qb) (Z1 + delta) with
        delta = -gap Z1 + sqrt(gap (2 - gap)) Z2, so gaps below the spacing of
        doubles near 1 stay resolvable.
        """
        cfg = self._config(cfg)
        if qa < 0 or qb < 0:
            raise DomainError("variances must be non-negative", qa=qa, qb=qb)
        if not 0.0 <= gap <= 2.0:
            raise DomainError(f"gap must lie in [0, 2], got {gap}")
        ra, rb = math.sqrt(qa), math.sqrt(qb)
        if gap == 0.0:
            return self.expect1(lambda z: (phi(ra * z) - phi(rb * z)) ** 2, 1.0, cfg,
                                kinks=[k / r for k in kinks for r in (ra, rb) if r > 0])
        s = math.sqrt(gap * (2.0 - gap))
        c = 1.0 - gap

        if cfg.kink_split and len(kinks):
            # the inner kink sweeps through the window over a band of width ~s around each kink
            centers = [k / ra for k in kinks if ra > 0]
            if rb > 0 and c > 1e-3:
                centers += [k / (rb * c) for k in kinks]
            offsets = s * np.array([-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0]) / max(abs(c), 1e-3)
            outer_breaks = np.unique(np.concatenate([ctr + offsets for ctr in centers]))
            z1, w1 = split_rule(outer_breaks)
        else:
            z1, w1 = hermite_rule(cfg.order)

        if cfg.kink_split and len(kinks) and rb > 0:
            breaks = (np.asarray(kinks, dtype=float)[None, :] / rb - c * z1[:, None]) / s
            z2, w2 = split_rule(breaks)
        else:
            z2, w2 = hermite_rule(cfg.order)
            z2, w2 = z2[None, :], w2[None, :]

        delta = -gap * z1[:, None] + s * z2
        values = (phi(ra * z1)[:, None] - phi(rb * (z1[:, None] + delta))) ** 2
        _check_finite(values, z2, 'increment integrand')
        return float(np.dot(w1, np.sum(w2 * values, axis=1)))

    def mc_expect2(self, g: RealFn, h: RealFn, qa: float, qb: float, c: float,
                   cfg: Optional[McConfig] = None, chunk: int = 250_000) -> Tuple[float, float]:
        """Monte-Carlo oracle for expect2: (sample mean, standard error)"""
        cfg = cfg or McConfig()
        if cfg.samples < 2:
            raise DomainError(f"Monte-Carlo needs at least 2 samples, got {cfg.samples}")
        if qa < 0 or qb < 0 or abs(c) > 1 + 1e-12:
            raise DomainError("invalid (qa, qb, c)", qa=qa, qb=qb, c=c)
        c = min(1.0, max(-1.0, float(c)))
        ra, rb = math.sqrt(qa), math.sqrt(qb)
        s = math.sqrt(max(0.0, (1.0 - c) * (1.0 + c)))
        rng = np.random.Generator(np.random.Philox(cfg.seed))

        total, total_sq, done = 0.0, 0.0, 0
        while done < cfg.samples:
            n = min(chunk, cfg.samples - done)
            z = rng.standard_normal((2, n))
            values = g(ra * z[0]) * h(rb * (c * z[0] + s * z[1]))
            total += float(np.sum(values))
            total_sq += float(np.sum(values * values))
            done += n
        mean = total / done
        variance = max(0.0, (total_sq - done * mean * mean) / (done - 1))
        return mean, math.sqrt(variance / done)


# Global quadrature engine instance
quadrature = GaussianQuadrature()
