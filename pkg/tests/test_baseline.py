import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hccr.baseline import (BLUR_SIGMA, blur_sample, blur_weights, boxcox, class_prototypes,
                           fit_mqdf, fit_projection, mqdf_classify, mqdf_discriminants,
                           npc_classify, scatter_matrices)


# ---------------------------------------------------------------- blur sampling

def test_sigma_matches_sampling_interval():
    assert BLUR_SIGMA == pytest.approx(4 * math.sqrt(2) / math.pi)
    assert BLUR_SIGMA == pytest.approx(1.80, abs=0.01)


def test_constant_plane_gives_constant_features():
    maps = np.zeros((8, 32, 32))
    maps[3] = 2.5
    f = blur_sample(maps).reshape(8, 8, 8)
    np.testing.assert_allclose(f[3], 2.5, rtol=1e-12)
    assert not np.delete(f, 3, axis=0).any()
    assert blur_sample(maps).shape == (512,)


def test_impulse_next_to_a_sample_point_peaks_there():
    maps = np.zeros((8, 32, 32))
    maps[0, 9, 10] = 1.0  # pixel centers 9.5 / 10.5 are both next to sample point 10
    f = blur_sample(maps).reshape(8, 8, 8)[0]
    w = blur_weights()
    assert f[2, 2] == pytest.approx(w[2].max() ** 2, rel=1e-12)
    others = np.delete(f.ravel(), 2 * 8 + 2)
    assert others.max() < f[2, 2]


def _dense_oracle(plane, sigma=BLUR_SIGMA):
    """Gaussian-filter every grid point with a freshly built 2-D kernel."""
    n = plane.shape[0]
    out = np.zeros((8, 8))
    for ky in range(8):
        for kx in range(8):
            cy, cx = 4 * ky + 2, 4 * kx + 2
            num = den = 0.0
            for r in range(n):
                for c in range(n):
                    dy, dx = r + 0.5 - cy, c + 0.5 - cx
                    if abs(dy) > 3 * sigma or abs(dx) > 3 * sigma:
                        continue
                    k = math.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
                    num += k * plane[r, c]
                    den += k
            out[ky, kx] = num / den
    return out


def test_blur_matches_dense_convolution():
    rng = np.random.default_rng(0)
    maps = rng.random((8, 32, 32)) * (rng.random((8, 32, 32)) < 0.2)
    f = blur_sample(maps).reshape(8, 8, 8)
    for p in (0, 5):
        np.testing.assert_allclose(f[p], _dense_oracle(maps[p]), rtol=0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_blur_is_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.random((2, 8, 32, 32))
    np.testing.assert_allclose(blur_sample(alpha * m1 + m2), alpha * blur_sample(m1) + blur_sample(m2),
                               rtol=0, atol=1e-10)


def test_boxcox():
    np.testing.assert_array_equal(boxcox([0.0, 1.0, 4.0]), [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        boxcox([-1e-9])


# ---------------------------------------------------------------- projections

def test_fda_finds_the_separating_axis():
    rng = np.random.default_rng(1)
    y = np.repeat([0, 1], 1000)
    u = rng.normal(size=(2000, 6))
    for c in (0, 1):
        u[y == c] -= u[y == c].mean(0)
    sw, _ = scatter_matrices(u, y)
    u = u @ np.linalg.inv(np.linalg.cholesky(sw)).T  # pooled within-class scatter is exactly I
    x = u.copy()
    x[y == 1, 0] += 4.0  # class means differ along e1 only
    model = fit_projection(x, y, "fda", 1)
    v = model.basis[:, 0] / np.linalg.norm(model.basis[:, 0])
    assert math.acos(min(1.0, abs(v[0]))) < 1e-3


def test_pca_of_isotropic_data_is_flat():
    x = np.random.default_rng(2).normal(size=(20000, 5))
    model = fit_projection(x, np.zeros(len(x)), "pca", 5)
    assert model.eigenvalues.max() / model.eigenvalues.min() == pytest.approx(1.0, abs=0.1)
    np.testing.assert_allclose(model.basis.T @ model.basis, np.eye(5), atol=1e-12)


def _oracle_fda(x, y, out_dim, eps=1e-4):
    d = x.shape[1]
    mu = x.mean(0)
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in np.unique(y):
        xc = x[y == c]
        for row in xc:
            r = row - xc.mean(0)
            sw += np.outer(r, r)
        sb += len(xc) * np.outer(xc.mean(0) - mu, xc.mean(0) - mu)
    sw /= len(x)
    sb /= len(x)
    reg = sw + eps * np.trace(sw) / d * np.eye(d)
    # whiten with the symmetric inverse square root, then an ordinary eigensolve
    s, u = np.linalg.eigh(reg)
    w = u @ np.diag(s ** -0.5) @ u.T
    vals, vecs = np.linalg.eigh(w @ sb @ w)
    order = np.argsort(vals)[::-1][:out_dim]
    vecs = w @ vecs[:, order]
    vecs /= np.sqrt(np.einsum("ij,ik,kj->j", vecs, sw, vecs))
    return vals[order], vecs


def test_fda_matches_brute_force_generalized_eigensolve():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 10)) @ rng.normal(size=(10, 10))
    y = rng.integers(0, 6, 300)
    x += rng.normal(size=(6, 10))[y] * 3
    model = fit_projection(x, y, "fda", 5)
    vals, vecs = _oracle_fda(x, y, 5)
    np.testing.assert_allclose(model.eigenvalues, vals, rtol=1e-8)
    signs = np.sign((model.basis * vecs).sum(axis=0))
    np.testing.assert_allclose(model.basis, vecs * signs, rtol=0, atol=1e-8 * np.abs(vecs).max())


def test_fda_on_whitened_data_has_identity_within_scatter():
    rng = np.random.default_rng(4)
    y = np.repeat(np.arange(5), 200)
    x = rng.normal(size=(1000, 8))
    for c in range(5):
        x[y == c] -= x[y == c].mean(0)
    sw, _ = scatter_matrices(x, y)
    x = x @ np.linalg.inv(np.linalg.cholesky(sw)).T + rng.normal(size=(5, 8))[y] * 2
    model = fit_projection(x, y, "fda", 4)
    z = model.transform(x)
    swz, _ = scatter_matrices(z, y)
    np.testing.assert_allclose(swz, np.eye(4), atol=1e-6)


def test_projection_errors():
    x = np.random.default_rng(0).normal(size=(20, 4))
    y = np.repeat([0, 1], 10)
    with pytest.raises(ValueError):
        fit_projection(x, y, "fda", 2)
    with pytest.raises(ValueError):
        fit_projection(x, np.arange(20) % 11, "fda", 1)
    with pytest.raises(ValueError):
        fit_projection(x, y, "lda", 1)


# ---------------------------------------------------------------- NPC

def test_npc_examples():
    means = np.array([[0.0, 0], [5, 5], [1, 0], [9, 9], [7, 7], [3, 0]])
    assert npc_classify(means, [5.0, 5.0]) == 1
    assert npc_classify(means, [2.0, 0.0]) == 2  # equidistant to classes 2 and 5
    with pytest.raises(ValueError):
        npc_classify(np.zeros((0, 2)), [0.0, 0.0])


def test_npc_matches_exhaustive_scan():
    rng = np.random.default_rng(5)
    means = rng.normal(size=(13, 7))
    x = rng.normal(size=(500, 7))
    got = npc_classify(means, x)
    for xi, g in zip(x, got):
        best, best_d = 0, math.inf
        for k, m in enumerate(means):
            dist = sum((a - b) ** 2 for a, b in zip(xi, m))
            if dist < best_d:
                best, best_d = k, dist
        assert g == best


def test_class_prototypes():
    x = np.array([[1.0, 0], [3, 0], [0, 2]])
    np.testing.assert_array_equal(class_prototypes(x, [0, 0, 1]), [[2, 0], [0, 2]])


# ---------------------------------------------------------------- MQDF

def _random_classes(rng, c, d, n):
    x, y = [], []
    for k in range(c):
        a = rng.normal(size=(d, d))
        x.append(rng.normal(size=(n, d)) @ a + rng.normal(size=d) * 2)
        y += [k] * n
    return np.concatenate(x), np.array(y)


def test_mqdf_with_full_rank_equals_qdf():
    rng = np.random.default_rng(6)
    for _ in range(100):
        d = int(rng.integers(2, 6))
        c = int(rng.integers(2, 5))
        x, y = _random_classes(rng, c, d, 30)
        model = fit_mqdf(x, y, k=d)
        probe = rng.normal(size=(20, d)) * 3
        pred, g = mqdf_classify(model, probe)
        qdf = np.zeros((20, c))
        for k in range(c):
            xc = x[y == k]
            mu = xc.mean(0)
            cov = (xc - mu).T @ (xc - mu) / len(xc)
            diff = probe - mu
            qdf[:, k] = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(cov), diff) + np.linalg.slogdet(cov)[1]
        np.testing.assert_array_equal(pred, qdf.argmin(axis=1))
        np.testing.assert_allclose(g, qdf, rtol=1e-9, atol=1e-9)


def test_mqdf_hand_built_k2_d4():
    # one class with known covariance eigen-structure, plus a second class
    rot = np.linalg.qr(np.random.default_rng(7).normal(size=(4, 4)))[0]
    lam = np.array([9.0, 4.0, 1.0, 0.25])
    z = np.random.default_rng(8).normal(size=(4000, 4))
    z = (z - z.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(z.T, bias=True))).T
    x0 = z * np.sqrt(lam) @ rot.T + [1, 2, 3, 4]
    x1 = z @ rot.T * 2.0
    x = np.concatenate([x0, x1])
    y = np.repeat([0, 1], 4000)
    model = fit_mqdf(x, y, k=2)
    probe = np.array([[0.5, -1.0, 2.0, 3.0]])
    _, g = mqdf_classify(model, probe)
    # independent evaluation: eigensolve class 0 and apply the formula directly
    mu = x0.mean(0)
    vals, vecs = np.linalg.eig(np.cov(x0.T, bias=True))
    order = np.argsort(vals.real)[::-1]
    vals, vecs = vals.real[order], vecs.real[:, order]
    np.testing.assert_allclose(vals, lam, rtol=1e-8)
    vals1 = np.sort(np.linalg.eigvalsh(np.cov(x1.T, bias=True)))[::-1]
    delta = (vals[2:].mean() + vals1[2:].mean()) / 2
    assert model.delta == pytest.approx(delta, rel=1e-10)
    diff = probe[0] - mu
    proj = vecs[:, :2].T @ diff
    expected = ((proj**2) / vals[:2]).sum() + (diff @ diff - (proj**2).sum()) / delta \
        + np.log(vals[:2]).sum() + 2 * math.log(delta)
    assert g[0, 0] == pytest.approx(expected, rel=1e-9)


def test_mqdf_mean_of_class_wins_with_shared_delta():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(300, 3))
    y = np.repeat([0, 1, 2], 100)
    x += np.array([[0, 0, 0], [6, 0, 0], [0, 6, 0]])[y]
    model = fit_mqdf(x, y, k=1, delta=1.0)
    pred, _ = mqdf_classify(model, model.means)
    np.testing.assert_array_equal(pred, [0, 1, 2])


def test_mqdf_tie_goes_to_lower_index():
    model = fit_mqdf(np.array([[0.0, 1], [0, -1], [1, 0], [-1, 0]] * 2),
                     np.array([0, 0, 0, 0, 1, 1, 1, 1]), k=1, delta=1.0)
    pred, g = mqdf_classify(model, [[0.3, 0.2]])
    assert g[0, 0] == g[0, 1] and pred[0] == 0
    assert mqdf_discriminants(model, [[0.0, 0.0]]).shape == (1, 2)
