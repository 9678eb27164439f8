import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hccr.adaptation import (AdaptConfig, ClassMeans, StyleTransform, adapt_unsupervised,
                             adapted_logits, apply, beta_from_ratio, class_means,
                             error_reduction_rate, load_transform, parse_transform, save_transform,
                             serialize_transform, solve_stm, source_features, stm_objective)
from hccr.convnet import Architecture, NetworkParams, init, logits, toy_architecture


# ---------------------------------------------------------------- class means

def test_one_sample_per_class_is_its_own_mean():
    feats = np.arange(12.0).reshape(3, 4)
    m = class_means(feats, [2, 0, 1])
    np.testing.assert_array_equal(m.means, feats[[1, 2, 0]])


def test_two_sample_mean():
    m = class_means([[1.0, 0.0], [3.0, 0.0]], [1, 1], num_classes=3)
    np.testing.assert_array_equal(m.means[1], [2.0, 0.0])
    assert m.defined.tolist() == [False, True, False]
    assert np.isnan(m.means[0]).all()
    assert m.counts.tolist() == [0, 2, 0]


def test_class_means_match_grouped_average():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(10_000, 6)) * 10
    labels = rng.integers(0, 37, 10_000)
    m = class_means(feats, labels, 40)
    for k in range(40):
        rows = [feats[i] for i in range(len(labels)) if labels[i] == k]
        if not rows:
            assert not m.defined[k]
            continue
        total = np.zeros(6)
        for r in rows:
            total += r
        np.testing.assert_allclose(m.means[k], total / len(rows), rtol=0, atol=1e-12)


def test_class_means_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        class_means(np.zeros((2, 3)), [0, 5], num_classes=3)


# ---------------------------------------------------------------- closed form

def _instance(rng, d=None, n=None):
    d = d or int(rng.integers(1, 9))
    n = n or int(rng.integers(1, 51))
    phi = rng.normal(size=(n, d))
    t = rng.normal(size=(n, d))
    f = rng.random(n)
    return phi, t, f


def _gradients(tr, phi, t, f, beta, gamma):
    r = apply(tr, phi) - t
    ga = 2 * (r * f[:, None]).T @ phi + 2 * beta * (tr.A - np.eye(tr.d))
    gb = 2 * (f @ r) + 2 * gamma * tr.b
    return ga, gb


def test_kkt_residual_vanishes():
    rng = np.random.default_rng(1)
    for _ in range(100):
        phi, t, f = _instance(rng)
        beta = float(rng.uniform(0.01, 5))
        gamma = float(rng.choice([0.0, rng.uniform(0, 5)]))
        tr = solve_stm(phi, t, f, beta, gamma)
        ga, gb = _gradients(tr, phi, t, f, beta, gamma)
        assert np.linalg.norm(ga) + np.linalg.norm(gb) < 1e-8


def _descend(phi, t, f, beta, gamma, steps=10_000):
    """Plain gradient descent with a step from the Hessian's largest eigenvalue."""
    n, d = phi.shape
    z = np.concatenate([phi, np.ones((n, 1))], axis=1)
    h = 2 * (z * f[:, None]).T @ z + 2 * np.diag([beta] * d + [gamma])
    lr = 1.0 / np.linalg.eigvalsh(h).max()
    tr = StyleTransform.identity(d)
    for _ in range(steps):
        ga, gb = _gradients(tr, phi, t, f, beta, gamma)
        tr = StyleTransform(tr.A - lr * ga, tr.b - lr * gb)
    return tr


def test_closed_form_beats_gradient_descent():
    rng = np.random.default_rng(2)
    for _ in range(100):
        phi, t, f = _instance(rng)
        beta = float(rng.uniform(0.05, 3))
        gamma = float(rng.uniform(0, 2))
        closed = stm_objective(solve_stm(phi, t, f, beta, gamma), phi, t, f, beta, gamma)
        numeric = stm_objective(_descend(phi, t, f, beta, gamma), phi, t, f, beta, gamma)
        assert closed <= numeric + 1e-8


def test_huge_regularization_gives_identity():
    rng = np.random.default_rng(3)
    phi, t, f = _instance(rng, d=6, n=40)
    tr = solve_stm(phi, t, f, 1e12, 1e12)
    assert np.linalg.norm(tr.A - np.eye(6)) < 1e-4
    assert np.linalg.norm(tr.b) < 1e-4


def test_infinite_beta_is_exactly_identity():
    rng = np.random.default_rng(3)
    phi, t, f = _instance(rng, d=4, n=10)
    tr = solve_stm(phi, t, f, math.inf)
    np.testing.assert_array_equal(tr.A, np.eye(4))
    np.testing.assert_array_equal(tr.b, 0.0)


def test_recovers_an_exact_affine_map():
    rng = np.random.default_rng(4)
    d, n = 5, 30
    a_star = rng.normal(size=(d, d))
    b_star = rng.normal(size=d)
    phi = rng.normal(size=(n, d))
    t = phi @ a_star.T + b_star
    tr = solve_stm(phi, t, np.ones(n), 1e-9, 1e-9)
    np.testing.assert_allclose(tr.A, a_star, atol=1e-6)
    np.testing.assert_allclose(tr.b, b_star, atol=1e-6)


def test_regularization_is_monotone_in_beta():
    rng = np.random.default_rng(5)
    for _ in range(20):
        phi, t, f = _instance(rng, d=5, n=30)
        dists = [np.linalg.norm(solve_stm(phi, t, f, b).A - np.eye(5))
                 for b in np.geomspace(1e-3, 1e3, 25)]
        assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))


def test_zero_confidence_sample_has_no_influence():
    rng = np.random.default_rng(6)
    phi, t, f = _instance(rng, d=4, n=20)
    f[7] = 0.0
    base = solve_stm(phi, t, f, 0.5, 0.1)
    phi2, t2 = phi.copy(), t.copy()
    phi2[7] = rng.normal(size=4) * 100
    t2[7] = rng.normal(size=4) * 100
    moved = solve_stm(phi2, t2, f, 0.5, 0.1)
    np.testing.assert_allclose(moved.A, base.A, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(moved.b, base.b, rtol=1e-10, atol=1e-12)
    dropped = solve_stm(np.delete(phi, 7, 0), np.delete(t, 7, 0), np.delete(f, 7), 0.5, 0.1)
    np.testing.assert_allclose(dropped.A, base.A, rtol=1e-10, atol=1e-12)


def test_all_zero_confidences_keep_identity():
    tr = solve_stm(np.ones((3, 2)), np.zeros((3, 2)), np.zeros(3), 0.0, 0.0)
    np.testing.assert_array_equal(tr.A, np.eye(2))


def test_solver_rejects_bad_input():
    phi = np.ones((3, 2))
    with pytest.raises(ValueError):
        solve_stm(phi, np.ones((3, 3)), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        solve_stm(phi, phi, -np.ones(3), 1.0)
    with pytest.raises(ValueError):
        solve_stm(phi * np.nan, phi, np.ones(3), 1.0)
    with pytest.raises(ValueError):
        solve_stm(phi, phi, np.ones(3), 0.0)  # rank-deficient data term without a ridge


def test_beta_from_ratio():
    phi = np.array([[1.0, 1.0], [2.0, 0.0]])
    f = np.array([1.0, 0.5])
    energy = (1.0 * 2.0 + 0.5 * 4.0) / 2
    assert beta_from_ratio(0.2, phi, f) == pytest.approx(0.25 * energy)
    assert beta_from_ratio(0.0, phi, f) == 0.0
    assert math.isinf(beta_from_ratio(1.0, phi, f))
    with pytest.raises(ValueError):
        beta_from_ratio(1.5, phi, f)


# ---------------------------------------------------------------- application

def test_apply_identity_and_constant():
    phi = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(apply(StyleTransform.identity(3), phi), phi)
    mu = np.array([4.0, 5.0, 6.0])
    np.testing.assert_array_equal(apply(StyleTransform(np.zeros((3, 3)), mu), phi), [mu])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_apply_matches_naive_loops(d, seed):
    rng = np.random.default_rng(seed)
    tr = StyleTransform(rng.normal(size=(d, d)), rng.normal(size=d))
    phi = rng.normal(size=d)
    out = [tr.b[i] + sum(tr.A[i, j] * phi[j] for j in range(d)) for i in range(d)]
    np.testing.assert_allclose(apply(tr, phi), out, rtol=0, atol=1e-12)


def test_apply_rejects_width_mismatch():
    with pytest.raises(ValueError):
        apply(StyleTransform.identity(3), np.ones(4))


def test_identity_layer_leaves_logits_bit_identical():
    p = init(toy_architecture(10), 0)
    p.input_scale = 50.0
    maps = np.random.default_rng(0).random((6, 8, 32, 32)).astype(np.float32)
    phi = source_features(p, maps)
    np.testing.assert_array_equal(adapted_logits(p, phi, StyleTransform.identity(phi.shape[1])),
                                  logits(p, maps))


# ---------------------------------------------------------------- self-training

def feature_network(means, kappa=4.0):
    """Net whose source features equal the input vector and whose head is nearest-mean.

    Input maps are (d, 2, 2) with every pixel equal to the (positive) feature
    vector; a center-tap conv, a pool and an identity FC pass it through, and
    the output layer scores kappa * (mu_k . phi - |mu_k|^2 / 2).
    """
    c, d = means.shape
    arch = Architecture(in_channels=d, size=2, conv_widths=(d,), pool_after=(1,), fc_widths=(d,),
                        num_classes=c, dropout=(0.0, 0.0))
    conv = np.zeros((3, 3, d, d))
    conv[1, 1] = np.eye(d)
    w = [conv, np.zeros(d), np.eye(d), np.zeros(d), kappa * means.T,
         -kappa * 0.5 * (means**2).sum(axis=1)]
    return NetworkParams(arch, w, 1.0, np.dtype(np.float64))


def as_maps(phi):
    return np.repeat(np.repeat(phi[:, :, None, None], 2, axis=2), 2, axis=3)


def _clusters(rng, c=6, d=5, per=30, spread=0.4):
    means = 3.0 + 4.0 * rng.random((c, d))
    labels = np.repeat(np.arange(c), per)
    phi = means[labels] + rng.normal(0, spread, (len(labels), d))
    return means, np.maximum(phi, 0.01), labels


def test_feature_network_exposes_its_input():
    rng = np.random.default_rng(0)
    means, phi, labels = _clusters(rng)
    p = feature_network(means)
    np.testing.assert_allclose(source_features(p, as_maps(phi)), phi, rtol=1e-12)
    assert (logits(p, as_maps(phi)).argmax(axis=1) == labels).mean() > 0.95


def test_affine_shift_is_largely_undone():
    rng = np.random.default_rng(1)
    means, phi, labels = _clusters(rng)
    p = feature_network(means)
    cm = class_means(phi, labels, len(means))
    # a writer whose features are a fixed affine distortion of the source features
    d = means.shape[1]
    shift = np.eye(d) * 1.15 + rng.normal(0, 0.05, (d, d))
    offset = rng.normal(0, 0.6, d)
    shifted = phi @ shift.T + offset
    res = adapt_unsupervised(p, cm, as_maps(shifted), AdaptConfig())
    before = np.linalg.norm(shifted - cm.means[res.initial_predictions], axis=1).mean()
    z = apply(res.transform, shifted)
    after = np.linalg.norm(z - cm.means[res.predictions], axis=1).mean()
    assert after <= 0.5 * before
    assert (res.predictions == labels).mean() >= (res.initial_predictions == labels).mean()


def test_beta_tilde_one_leaves_predictions_unchanged():
    rng = np.random.default_rng(2)
    means, phi, labels = _clusters(rng, spread=1.5)
    p = feature_network(means)
    cm = class_means(phi, labels, len(means))
    maps = as_maps(phi @ (1.2 * np.eye(means.shape[1])).T)
    res = adapt_unsupervised(p, cm, maps, AdaptConfig(beta_tilde=1.0))
    np.testing.assert_array_equal(res.predictions, res.initial_predictions)
    np.testing.assert_array_equal(res.predictions, logits(p, maps).argmax(axis=1))
    np.testing.assert_array_equal(res.transform.A, np.eye(means.shape[1]))


def test_huge_regularizers_leave_predictions_unchanged():
    rng = np.random.default_rng(2)
    means, phi, labels = _clusters(rng, spread=1.5)
    p = feature_network(means)
    maps = as_maps(phi)
    phi_s = source_features(p, maps)
    pred = logits(p, maps).argmax(axis=1)
    # with gamma = 0 the offset stays free however large beta is, so both are pinned
    tr = solve_stm(phi_s, means[pred], np.ones(len(pred)), 1e12, 1e12)
    np.testing.assert_array_equal(adapted_logits(p, phi_s, tr).argmax(axis=1), pred)


def test_adaptation_is_deterministic_and_does_not_touch_the_network():
    rng = np.random.default_rng(3)
    means, phi, labels = _clusters(rng)
    p = feature_network(means)
    before = [w.copy() for w in p.weights]
    cm = class_means(phi, labels, len(means))
    maps = as_maps(phi * 1.1)
    r1 = adapt_unsupervised(p, cm, maps)
    r2 = adapt_unsupervised(p, cm, maps)
    np.testing.assert_array_equal(r1.transform.A, r2.transform.A)
    np.testing.assert_array_equal(r1.predictions, r2.predictions)
    assert all(np.array_equal(a, b) for a, b in zip(before, p.weights))


def test_undefined_class_means_are_skipped(caplog):
    rng = np.random.default_rng(4)
    means, phi, labels = _clusters(rng)
    p = feature_network(means)
    keep = labels != 2
    cm = class_means(phi[keep], labels[keep], len(means))
    assert not cm.defined[2]
    res = adapt_unsupervised(p, cm, as_maps(phi))
    assert np.isfinite(res.transform.A).all()
    assert "without a mean" in caplog.text


def test_adaptation_rejects_empty_input_and_wrong_layer():
    rng = np.random.default_rng(5)
    means, phi, labels = _clusters(rng)
    p = feature_network(means)
    cm = class_means(phi, labels, len(means))
    with pytest.raises(ValueError):
        adapt_unsupervised(p, cm, as_maps(phi[:0]))
    with pytest.raises(ValueError):
        adapt_unsupervised(p, ClassMeans(np.zeros((6, 3)), np.ones(6, int)), as_maps(phi))


def test_adapt_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(beta_tilde=-0.1)
    with pytest.raises(ValueError):
        AdaptConfig(iterations=0)
    with pytest.raises(ValueError):
        AdaptConfig(gamma=-1)


# ---------------------------------------------------------------- error reduction rate

def test_error_reduction_examples():
    assert error_reduction_rate(0.0067, 0.0037) == pytest.approx(0.4478, abs=5e-4)
    assert error_reduction_rate(0.1, 0.1) == 0.0
    assert error_reduction_rate(0.2, 0.0) == 1.0
    assert error_reduction_rate(0.0, 0.0) is None
    assert error_reduction_rate(0.1, 0.15) == pytest.approx(-0.5)


# ---------------------------------------------------------------- STMA files

def test_stma_round_trip_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        d = int(rng.integers(1, 9))
        tr = StyleTransform(rng.normal(size=(d, d)) * 10 ** rng.uniform(-5, 5),
                            rng.normal(size=d))
        data = serialize_transform(tr)
        back = parse_transform(data)
        assert np.array_equal(back.A, tr.A) and np.array_equal(back.b, tr.b)
        assert serialize_transform(back) == data


def test_stma_layout_and_errors(tmp_path):
    tr = StyleTransform(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([5.0, 6.0]))
    data = serialize_transform(tr)
    assert data[:4] == b"STMA" and int.from_bytes(data[4:8], "little") == 2
    assert np.frombuffer(data[8:], "<f8").tolist() == [1, 2, 3, 4, 5, 6]
    save_transform(tr, tmp_path / "w.stma")
    assert np.array_equal(load_transform(tmp_path / "w.stma").A, tr.A)
    with pytest.raises(ValueError):
        parse_transform(data[:-1])
    with pytest.raises(ValueError):
        parse_transform(b"ATMS" + data[4:])
