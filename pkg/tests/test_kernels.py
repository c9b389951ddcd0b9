import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drcn import autodiff as ad
from drcn.kernels import (SKIPPED, KernelBank, classwise_mkmmd, gaussian_kernel, gram,
                          jmmd_linear, jmmd_quadratic, median_bandwidth, mmd_quadratic)

from conftest import numeric_grad, rel_err

BANK = KernelBank((0.5, 1.0, 2.0))


# --- naive oracles: explicit loops over pairs, independent of the matrix code ---

def k_bank(x, y, bank):
    return sum(math.exp(-sum((a - b) ** 2 for a, b in zip(x, y)) / (2 * s)) for s in
               bank.bandwidths_squared) / len(bank)


def mmd_oracle(xs, xt, bank):
    ns, nt = len(xs), len(xt)
    a = sum(k_bank(xs[i], xs[j], bank) for i in range(ns) for j in range(ns)) / ns ** 2
    b = sum(k_bank(xs[i], xt[j], bank) for i in range(ns) for j in range(nt)) / (ns * nt)
    c = sum(k_bank(xt[i], xt[j], bank) for i in range(nt) for j in range(nt)) / nt ** 2
    return a - 2 * b + c


def classwise_oracle(fs, ys, ft, pt, k, bank):
    src = [i for i in range(len(fs)) if ys[i] == k]
    mass = sum(pt[j][k] for j in range(len(ft)))
    if not src or mass < 1e-8:
        return SKIPPED
    # weighted pairs: source weight 1/n_s^k, target weight p_j^k / n_t^k
    wa = {i: 1.0 / len(src) for i in src}
    wb = {j: pt[j][k] / mass for j in range(len(ft))}
    total = 0.0
    for i in wa:
        for j in wa:
            total += wa[i] * wa[j] * k_bank(fs[i], fs[j], bank)
    for i in wa:
        for j in wb:
            total -= 2 * wa[i] * wb[j] * k_bank(fs[i], ft[j], bank)
    for i in wb:
        for j in wb:
            total += wb[i] * wb[j] * k_bank(ft[i], ft[j], bank)
    return total


def jmmd_oracle(fs, ps, ft, pt, b1, b2):
    ns, nt = len(fs), len(ft)

    def kk(f1, p1, f2, p2):
        return k_bank(f1, f2, b1) * k_bank(p1, p2, b2)

    a = sum(kk(fs[i], ps[i], fs[j], ps[j]) for i in range(ns) for j in range(ns)) / ns ** 2
    b = sum(kk(fs[i], ps[i], ft[j], pt[j]) for i in range(ns) for j in range(nt)) / (ns * nt)
    c = sum(kk(ft[i], pt[i], ft[j], pt[j]) for i in range(nt) for j in range(nt)) / nt ** 2
    return a - 2 * b + c


def jmmd_linear_oracle(fs, ps, ft, pt, b1, b2):
    n = len(fs) - len(fs) % 2

    def kk(f1, p1, f2, p2):
        return k_bank(f1, f2, b1) * k_bank(p1, p2, b2)

    total = 0.0
    for i in range(0, n, 2):
        total += (kk(fs[i], ps[i], fs[i + 1], ps[i + 1]) + kk(ft[i], pt[i], ft[i + 1], pt[i + 1])
                  - kk(fs[i], ps[i], ft[i + 1], pt[i + 1]) - kk(ft[i], pt[i], fs[i + 1], ps[i + 1]))
    return total * 2 / n


def simplex(rng, n, c):
    p = rng.uniform(size=(n, c)) ** 3
    return p / p.sum(1, keepdims=True)


# --- gaussian_kernel / median_bandwidth ---

def test_gaussian_kernel_values():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 0.3) == 1.0
    assert gaussian_kernel([0.0], [1.0], 1.0) == pytest.approx(0.60653066, abs=1e-8)
    vals = [gaussian_kernel([0.0], [1.0], s) for s in (0.1, 1.0, 10.0, 1e3, 1e6)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("s2", [0.0, -1.0])
def test_gaussian_kernel_rejects_nonpositive_bandwidth(s2):
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [1.0], s2)


def test_median_bandwidth_cases():
    assert median_bandwidth(np.array([[0.0], [2.0]])) == 2.0
    assert median_bandwidth(np.ones((5, 3))) == 1.0
    with pytest.raises(ValueError):
        median_bandwidth(np.ones((1, 3)))


def test_median_bandwidth_matches_all_pairs_oracle():
    x = np.random.default_rng(7).normal(size=(50, 3))
    d = [float(np.sum((x[i] - x[j]) ** 2)) for i in range(50) for j in range(i + 1, 50)]
    assert median_bandwidth(x) == pytest.approx(float(np.median(d)) / 2, rel=1e-12)


def test_bank_rejects_bad_bandwidths():
    with pytest.raises(ValueError):
        KernelBank(())
    with pytest.raises(ValueError):
        KernelBank((1.0, 0.0))


def test_bank_from_samples_uses_multipliers():
    x = np.array([[0.0], [2.0]])
    assert KernelBank.from_samples(x).bandwidths_squared == (0.5, 1.0, 2.0, 4.0, 8.0)


# --- mmd_quadratic ---

def test_mmd_identical_samples_is_exactly_zero():
    x = np.random.default_rng(1).normal(size=(9, 4))
    assert mmd_quadratic(x, x.copy(), BANK) == 0.0


def test_mmd_single_points():
    a, b = np.array([[0.0, 1.0]]), np.array([[1.0, -1.0]])
    s = KernelBank((0.7,))
    assert mmd_quadratic(a, b, s) == pytest.approx(2 - 2 * gaussian_kernel(a, b, 0.7), abs=1e-15)


def test_mmd_matches_triple_loop_oracle():
    rng = np.random.default_rng(2)
    xs, xt = rng.normal(size=(8, 3)), rng.normal(size=(5, 3)) + 0.5
    assert abs(mmd_quadratic(xs, xt, BANK) - mmd_oracle(xs.tolist(), xt.tolist(), BANK)) < 1e-10


def test_mmd_rejects_bad_input():
    with pytest.raises(ValueError):
        mmd_quadratic(np.zeros((0, 2)), np.zeros((3, 2)), BANK)
    with pytest.raises(ValueError):
        mmd_quadratic(np.zeros((2, 2)), np.zeros((3, 3)), BANK)


def test_mmd_permutation_invariant():
    rng = np.random.default_rng(4)
    xs, xt = rng.normal(size=(10, 2)), rng.normal(size=(7, 2))
    base = mmd_quadratic(xs, xt, BANK)
    perm = mmd_quadratic(xs[rng.permutation(10)], xt[rng.permutation(7)], BANK)
    assert abs(base - perm) <= 1e-12


# --- classwise_mkmmd ---

def test_classwise_zero_under_matched_means():
    rng = np.random.default_rng(5)
    fs = rng.normal(size=(6, 3))
    ys = np.array([0, 2, 2, 1, 2, 0])
    ft = fs[ys == 2].copy()
    pt = np.zeros((3, 3))
    pt[:, 2] = 1.0
    assert abs(classwise_mkmmd(fs, ys, ft, pt, 2, BANK)) < 1e-12


def test_classwise_skips_degenerate_classes():
    rng = np.random.default_rng(6)
    fs, ft = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    pt = simplex(rng, 3, 3)
    assert classwise_mkmmd(fs, np.array([0, 0, 1, 1]), ft, pt, 2, BANK) is SKIPPED
    pt0 = pt.copy()
    pt0[:, 1] = 0.0
    pt0 /= pt0.sum(1, keepdims=True)
    assert classwise_mkmmd(fs, np.array([0, 0, 1, 1]), ft, pt0, 1, BANK) is SKIPPED


def test_classwise_rejects_non_probability_rows():
    with pytest.raises(ValueError):
        classwise_mkmmd(np.zeros((2, 2)), [0, 1], np.zeros((2, 2)),
                        np.array([[0.5, 0.6], [0.5, 0.5]]), 0, BANK)


def test_classwise_matches_weighted_pair_oracle():
    rng = np.random.default_rng(8)
    fs, ft = rng.normal(size=(9, 3)), rng.normal(size=(7, 3))
    ys = rng.integers(0, 4, size=9)
    pt = simplex(rng, 7, 4)
    for k in range(4):
        got = classwise_mkmmd(fs, ys, ft, pt, k, BANK)
        want = classwise_oracle(fs.tolist(), ys.tolist(), ft.tolist(), pt.tolist(), k, BANK)
        if want is SKIPPED:
            assert got is SKIPPED
        else:
            assert abs(got - want) < 1e-10


# --- jmmd ---

def test_jmmd_quadratic_identical_tuples_zero():
    rng = np.random.default_rng(9)
    f, p = rng.normal(size=(6, 3)), simplex(rng, 6, 4)
    assert jmmd_quadratic(f, p, f.copy(), p.copy(), BANK, BANK) == 0.0


def test_jmmd_quadratic_single_pair():
    a, b = np.array([[0.0, 1.0]]), np.array([[2.0, 0.0]])
    p, q = np.array([[0.3, 0.7]]), np.array([[0.9, 0.1]])
    b1, b2 = KernelBank((1.3,)), KernelBank((0.2,))
    want = 1 - 2 * gaussian_kernel(a, b, 1.3) * gaussian_kernel(p, q, 0.2) + 1
    assert jmmd_quadratic(a, p, b, q, b1, b2) == pytest.approx(want, abs=1e-15)


def test_jmmd_quadratic_matches_oracle():
    rng = np.random.default_rng(10)
    fs, ft = rng.normal(size=(6, 3)), rng.normal(size=(5, 3))
    ps, pt = simplex(rng, 6, 3), simplex(rng, 5, 3)
    b2 = KernelBank((0.1, 0.4))
    got = jmmd_quadratic(fs, ps, ft, pt, BANK, b2)
    want = jmmd_oracle(fs.tolist(), ps.tolist(), ft.tolist(), pt.tolist(), BANK, b2)
    assert abs(got - want) < 1e-10


def test_jmmd_quadratic_rejects_mismatch():
    with pytest.raises(ValueError):
        jmmd_quadratic(np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((3, 2)),
                       BANK, BANK)


def test_jmmd_linear_identical_streams_zero():
    rng = np.random.default_rng(11)
    f, p = rng.normal(size=(8, 3)), simplex(rng, 8, 3)
    assert jmmd_linear(f, p, f.copy(), p.copy(), BANK, BANK) == 0.0


def test_jmmd_linear_hand_expansion_n2():
    s1, s2, t1, t2 = [0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.0, 1.0]
    q1, q2, r1, r2 = [1.0, 0.0], [0.5, 0.5], [0.2, 0.8], [0.0, 1.0]
    b1, b2 = KernelBank((1.0,)), KernelBank((0.5,))

    def kk(f1, p1, f2, p2):
        return gaussian_kernel(f1, f2, 1.0) * gaussian_kernel(p1, p2, 0.5)

    want = (kk(s1, q1, s2, q2) + kk(t1, r1, t2, r2) - kk(s1, q1, t2, r2) - kk(t1, r1, s2, q2))
    got = jmmd_linear(np.array([s1, s2]), np.array([q1, q2]), np.array([t1, t2]),
                      np.array([r1, r2]), b1, b2)
    assert got == pytest.approx(want, abs=1e-15)


def test_jmmd_linear_drops_last_odd_sample():
    rng = np.random.default_rng(12)
    fs, ft = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    ps, pt = simplex(rng, 3, 2), simplex(rng, 3, 2)
    assert jmmd_linear(fs, ps, ft, pt, BANK, BANK) == jmmd_linear(fs[:2], ps[:2], ft[:2], pt[:2],
                                                                  BANK, BANK)


def test_jmmd_linear_rejects_small_or_unequal():
    with pytest.raises(ValueError):
        jmmd_linear(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)),
                    BANK, BANK)
    with pytest.raises(ValueError):
        jmmd_linear(np.zeros((4, 2)), np.zeros((4, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                    BANK, BANK)


def test_jmmd_linear_matches_oracle():
    rng = np.random.default_rng(13)
    fs, ft = rng.normal(size=(9, 3)), rng.normal(size=(9, 3))
    ps, pt = simplex(rng, 9, 4), simplex(rng, 9, 4)
    got = jmmd_linear(fs, ps, ft, pt, BANK, BANK)
    want = jmmd_linear_oracle(fs.tolist(), ps.tolist(), ft.tolist(), pt.tolist(), BANK, BANK)
    assert abs(got - want) < 1e-10


def test_jmmd_linear_mean_is_zero_under_null():
    vals = []
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        fs, ft = rng.normal(size=(200, 3)), rng.normal(size=(200, 3))
        ps, pt = simplex(rng, 200, 3), simplex(rng, 200, 3)
        vals.append(jmmd_linear(fs, ps, ft, pt, BANK, KernelBank((0.1,))))
    vals = np.array(vals)
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(vals.size)


# --- properties ---

@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)),
              elements=st.floats(-10, 10)),
       st.floats(0.05, 20.0))
def test_gram_is_symmetric_psd(x, s2):
    k = gram(x, x, KernelBank((s2, 2 * s2)))
    assert np.array_equal(k, k.T)
    assert np.linalg.eigvalsh(k).min() >= -1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 8), st.floats(0.0, 3.0))
def test_quadratic_estimators_nonnegative(seed, ns, nt, shift):
    rng = np.random.default_rng(seed)
    xs, xt = rng.normal(size=(ns, 2)), rng.normal(size=(nt, 2)) + shift
    assert mmd_quadratic(xs, xt, BANK) >= -1e-10
    ps, pt = simplex(rng, ns, 3), simplex(rng, nt, 3)
    assert jmmd_quadratic(xs, ps, xt, pt, BANK, BANK) >= -1e-10
    ys = rng.integers(0, 3, size=ns)
    for k in range(3):
        v = classwise_mkmmd(xs, ys, xt, pt, k, BANK)
        assert v is SKIPPED or v >= -1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_jmmd_quadratic_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    fs, ft = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    ps, pt = simplex(rng, 7, 3), simplex(rng, 5, 3)
    i, j = rng.permutation(7), rng.permutation(5)
    a = jmmd_quadratic(fs, ps, ft, pt, BANK, BANK)
    b = jmmd_quadratic(fs[i], ps[i], ft[j], pt[j], BANK, BANK)
    assert abs(a - b) <= 1e-12


# --- differentiable path ---

def test_estimators_return_nodes_for_node_inputs():
    rng = np.random.default_rng(14)
    fs, ft = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    out = mmd_quadratic(ad.param(fs), ft, BANK)
    assert isinstance(out, ad.Node)
    assert out.item() == pytest.approx(mmd_quadratic(fs, ft, BANK), abs=1e-14)


@pytest.mark.parametrize("which", ["mmd", "classwise", "jmmd", "jmmd_linear"])
def test_estimator_gradients_match_finite_differences(which):
    rng = np.random.default_rng(15)
    fs, ft = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    ps, pt = simplex(rng, 6, 3), simplex(rng, 6, 3)
    ys = np.array([0, 1, 2, 0, 1, 1])

    def f(ftv, as_node=False):
        t = ad.param(ftv) if as_node else ftv
        if which == "mmd":
            return mmd_quadratic(fs, t, BANK)
        if which == "classwise":
            return classwise_mkmmd(fs, ys, t, pt, 1, BANK)
        if which == "jmmd":
            return jmmd_quadratic(fs, ps, t, pt, BANK, BANK)
        return jmmd_linear(fs, ps, t, pt, BANK, BANK)

    leaf = ad.param(ft)
    node = {"mmd": lambda: mmd_quadratic(fs, leaf, BANK),
            "classwise": lambda: classwise_mkmmd(fs, ys, leaf, pt, 1, BANK),
            "jmmd": lambda: jmmd_quadratic(fs, ps, leaf, pt, BANK, BANK),
            "jmmd_linear": lambda: jmmd_linear(fs, ps, leaf, pt, BANK, BANK)}[which]()
    analytic = ad.grad(node, leaf)
    assert rel_err(analytic, numeric_grad(f, ft.copy())) < 1e-4
