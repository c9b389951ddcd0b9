"""Gaussian kernel banks and the MMD-family discrepancy estimators.

The estimators accept either plain arrays or autodiff nodes. With arrays they
return a float; as soon as one input is a :class:`~drcn.autodiff.Node` they
return a 1x1 node so the value can be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ShapeError

BANK_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)
PROB_TOL = 1e-6
MASS_FLOOR = 1e-8


class _Skipped:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SKIPPED"

    def __bool__(self):
        return False


SKIPPED = _Skipped()
"""Returned by :func:`classwise_mkmmd` for a class with no usable mass."""


@dataclass(frozen=True)
class KernelBank:
    """Uniformly averaged Gaussian kernels, one per squared bandwidth."""

    bandwidths_squared: tuple[float, ...]

    def __post_init__(self):
        bw = tuple(float(s) for s in self.bandwidths_squared)
        if not bw:
            raise ValueError("KernelBank needs at least one bandwidth")
        if any(not np.isfinite(s) or s <= 0 for s in bw):
            raise ValueError(f"bandwidths must be positive, got {bw}")
        object.__setattr__(self, "bandwidths_squared", bw)

    @classmethod
    def from_samples(cls, samples, multipliers: Sequence[float] = BANK_MULTIPLIERS) -> "KernelBank":
        base = median_bandwidth(samples)
        return cls(tuple(base * m for m in multipliers))

    def __len__(self):
        return len(self.bandwidths_squared)


def gaussian_kernel(x, y, sigma2: float) -> float:
    """exp(-||x - y||^2 / (2 sigma2)) for two vectors."""
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"kernel arguments differ in dimension: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-(d @ d) / (2.0 * sigma2)))


def median_bandwidth(samples) -> float:
    """Half the median pairwise squared distance between distinct rows.

    Falls back to 1.0 when that median is zero.
    """
    x = np.asarray(samples.value if isinstance(samples, Node) else samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError(f"median_bandwidth needs at least 2 samples, got {x.shape[0]}")
    sq = (x * x).sum(1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    iu = np.triu_indices(x.shape[0], k=1)
    med = float(np.median(d[iu]))
    return med / 2.0 if med > 0 else 1.0


def gram(x, y, bank: KernelBank) -> np.ndarray:
    """Bank-averaged Gram matrix between the rows of ``x`` and ``y``."""
    return _gram(ad.const(x), ad.const(y), bank).value


def _gram(a: Node, b: Node, bank: KernelBank) -> Node:
    d = ad.pairwise_sqdist(a, b)
    return _bank_average(d, bank)


def _bank_average(sqdist: Node, bank: KernelBank) -> Node:
    terms = [ad.exp(ad.scale(sqdist, -0.5 / s2)) for s2 in bank.bandwidths_squared]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms)) if len(terms) > 1 else total


def _prepare(*xs):
    differentiable = any(isinstance(x, Node) for x in xs)
    return differentiable, [ad.as_node(x) for x in xs]


def _finish(node: Node, differentiable: bool):
    return node if differentiable else node.item()


def _check_pair(name, a: Node, b: Node):
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError(f"{name}: empty input")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"{name}: feature dimension mismatch {a.shape} vs {b.shape}")


def mmd_quadratic(xs, xt, bank: KernelBank):
    """Biased (V-statistic) squared MMD between two samples."""
    diff, (s, t) = _prepare(xs, xt)
    _check_pair("mmd_quadratic", s, t)
    kss = ad.mean_all(_gram(s, s, bank))
    kst = ad.mean_all(_gram(s, t, bank))
    ktt = ad.mean_all(_gram(t, t, bank))
    return _finish(kss - ad.scale(kst, 2.0) + ktt, diff)


def _check_probs(p: np.ndarray):
    if p.min() < -PROB_TOL or np.abs(p.sum(1) - 1.0).max() > PROB_TOL:
        bad = int(np.argmax(np.abs(p.sum(1) - 1.0) + (p.min(1) < -PROB_TOL)))
        raise ValueError(f"row {bad} of the target probabilities is not a probability vector")


def _class_mean_weights(ys, pt: np.ndarray, num_classes: int):
    """Per-class averaging columns for source rows and target rows.

    Returns (a, b, valid): ``a[i, k] = 1/n_s^k`` for source rows of class k,
    ``b[j, k] = pt[j, k] / n_t^k``; columns of skipped classes are zero.
    """
    ys = np.asarray(ys, dtype=np.int64).ravel()
    onehot = np.zeros((ys.size, num_classes))
    onehot[np.arange(ys.size), ys] = 1.0
    ns = onehot.sum(0)
    nt = pt.sum(0)
    valid = (ns > 0) & (nt >= MASS_FLOOR)
    a = np.divide(onehot, ns, out=np.zeros_like(onehot), where=valid[None, :])
    b = np.divide(pt, nt, out=np.zeros_like(pt), where=valid[None, :])
    return a, b, valid


def classwise_discrepancies(fs, ys, ft, pt, bank: KernelBank, num_classes: int | None = None):
    """Squared MK-MMD between source class k and the pt-weighted target, for every k.

    ``pt`` is treated as constant weights. Returns (values, valid) where
    ``values`` is a (1, C) node (or array) and ``valid`` flags the classes that
    were not skipped; skipped entries hold 0.
    """
    diff, (s, t) = _prepare(fs, ft)
    _check_pair("classwise_mkmmd", s, t)
    pt = np.asarray(pt.value if isinstance(pt, Node) else pt, dtype=np.float64)
    if pt.shape[0] != t.shape[0]:
        raise ShapeError(f"classwise_mkmmd: {t.shape[0]} target rows but {pt.shape[0]} probability rows")
    _check_probs(pt)
    ys = np.asarray(ys, dtype=np.int64).ravel()
    if ys.size != s.shape[0]:
        raise ShapeError(f"classwise_mkmmd: {s.shape[0]} source rows but {ys.size} labels")
    c = pt.shape[1] if num_classes is None else num_classes
    if ys.size and (ys.min() < 0 or ys.max() >= c):
        raise ValueError(f"source label out of range [0, {c})")
    a, b, valid = _class_mean_weights(ys, pt, c)
    a_, b_ = ad.const(a), ad.const(b)
    t1 = ad.sum_cols(ad.mul(a_, ad.matmul(_gram(s, s, bank), a_)))
    t2 = ad.sum_cols(ad.mul(a_, ad.matmul(_gram(s, t, bank), b_)))
    t3 = ad.sum_cols(ad.mul(b_, ad.matmul(_gram(t, t, bank), b_)))
    values = t1 - ad.scale(t2, 2.0) + t3
    return (values if diff else values.value.ravel()), valid


def classwise_mkmmd(fs, ys, ft, pt, k: int, bank: KernelBank):
    """Squared MK-MMD for class ``k`` between source and probability-weighted target.

    Returns :data:`SKIPPED` when the batch holds no source sample of class k or
    the target mass for k is below 1e-8.
    """
    pt_arr = np.asarray(pt.value if isinstance(pt, Node) else pt, dtype=np.float64)
    if not 0 <= k < pt_arr.shape[1]:
        raise ValueError(f"class index {k} out of range [0, {pt_arr.shape[1]})")
    values, valid = classwise_discrepancies(fs, ys, ft, pt_arr, bank)
    if not valid[k]:
        return SKIPPED
    if isinstance(values, Node):
        mask = np.zeros((1, values.shape[1]))
        mask[0, k] = 1.0
        return ad.sum_all(ad.mul(values, ad.const(mask)))
    return float(values[k])


def _check_joint(name, f: Node, p: Node):
    if f.shape[0] != p.shape[0]:
        raise ShapeError(f"{name}: {f.shape[0]} feature rows vs {p.shape[0]} probability rows")


def jmmd_quadratic(fs, ps, ft, pt, bank1: KernelBank, bank2: KernelBank):
    """Joint MMD with the product kernel bank1(features) * bank2(probabilities)."""
    diff, (fs_, ps_, ft_, pt_) = _prepare(fs, ps, ft, pt)
    _check_pair("jmmd_quadratic", fs_, ft_)
    _check_pair("jmmd_quadratic", ps_, pt_)
    _check_joint("jmmd_quadratic", fs_, ps_)
    _check_joint("jmmd_quadratic", ft_, pt_)

    def joint(f1, p1, f2, p2):
        return ad.mean_all(ad.mul(_gram(f1, f2, bank1), _gram(p1, p2, bank2)))

    value = (joint(fs_, ps_, fs_, ps_) - ad.scale(joint(fs_, ps_, ft_, pt_), 2.0)
             + joint(ft_, pt_, ft_, pt_))
    return _finish(value, diff)


def jmmd_linear(fs, ps, ft, pt, bank1: KernelBank, bank2: KernelBank):
    """Linear-time joint MMD over consecutive quad-tuples.

    Rows (2i, 2i+1) of each domain form the i-th quad-tuple; with an odd
    count the last row of each domain is dropped.
    """
    diff, (fs_, ps_, ft_, pt_) = _prepare(fs, ps, ft, pt)
    _check_pair("jmmd_linear", fs_, ft_)
    _check_pair("jmmd_linear", ps_, pt_)
    _check_joint("jmmd_linear", fs_, ps_)
    _check_joint("jmmd_linear", ft_, pt_)
    n = fs_.shape[0]
    if ft_.shape[0] != n:
        raise ShapeError(f"jmmd_linear: needs equal batch sizes, got {n} and {ft_.shape[0]}")
    if n < 2:
        raise ValueError(f"jmmd_linear: needs at least 2 samples per domain, got {n}")
    m = n // 2
    odd, even = np.arange(0, 2 * m, 2), np.arange(1, 2 * m, 2)
    s1f, s2f = ad.take_rows(fs_, odd), ad.take_rows(fs_, even)
    s1p, s2p = ad.take_rows(ps_, odd), ad.take_rows(ps_, even)
    t1f, t2f = ad.take_rows(ft_, odd), ad.take_rows(ft_, even)
    t1p, t2p = ad.take_rows(pt_, odd), ad.take_rows(pt_, even)

    def joint(fa, pa, fb, pb):
        return ad.mul(_bank_average(ad.rowwise_sqdist(fa, fb), bank1),
                      _bank_average(ad.rowwise_sqdist(pa, pb), bank2))

    per_tuple = (joint(s1f, s1p, s2f, s2p) + joint(t1f, t1p, t2f, t2p)
                 - joint(s1f, s1p, t2f, t2p) - joint(t1f, t1p, s2f, s2p))
    return _finish(ad.scale(ad.sum_all(per_tuple), 1.0 / m), diff)
