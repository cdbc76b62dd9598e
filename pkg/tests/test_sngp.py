import inspect
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from gradcheck import check, check_store
from vntraj.core import tensor as T
from vntraj.core.params import ParamStore
from vntraj.sngp import (SngpConfig, SngpHead, SngpState, gaussian_nll, init_state, power_iteration,
                         precision_update, reset_covariance, rff, rff_tensor, sngp_forward,
                         spectral_normalize, uncertainty)


def _state(D, s=0.1, in_dim=3, rng=None):
    rng = rng or np.random.default_rng(0)
    return init_state(SngpConfig(rff_dim=D, ridge=s), in_dim, rng)


def _fold_left(phis, D, m, s):
    """Independent recursion: explicit outer-product sums, no matrix products."""
    P = [[s if i == j else 0.0 for j in range(D)] for i in range(D)]
    for batch in phis:
        nxt = [[m * P[i][j] for j in range(D)] for i in range(D)]
        for row in batch:
            for i in range(D):
                for j in range(D):
                    nxt[i][j] += (1 - m) * row[i] * row[j]
        P = nxt
    return np.array(P)


# ---------------------------------------------------------------- spectral norm


def test_spectral_normalize_diag():
    out, _ = spectral_normalize(np.diag([3.0, 1.0]), np.array([0.6, 0.8]), iters=50)
    np.testing.assert_allclose(out, np.diag([1.0, 1.0 / 3.0]), atol=1e-9)


def test_already_bounded_unchanged(rng):
    W = rng.normal(size=(4, 4))
    W /= 2 * np.linalg.norm(W, 2)
    out, _ = spectral_normalize(W, rng.normal(size=4), iters=20)
    np.testing.assert_array_equal(out, W)


@pytest.mark.parametrize("seed", range(10))
def test_spectral_norm_against_svd(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 4)) * 3
    sigma, _ = power_iteration(W, rng.normal(size=5), 100)
    assert sigma == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-9)
    out, _ = spectral_normalize(W, rng.normal(size=5), iters=100, bound=1.0)
    assert np.linalg.svd(out, compute_uv=False)[0] <= 1.0 + 1e-6


def test_zero_matrix_rejected():
    with pytest.raises(ValueError):
        spectral_normalize(np.zeros((2, 2)), np.ones(2))


def test_persistent_vector_converges_across_steps(rng):
    cfg = SngpConfig(rff_dim=4, sn_iters=1)
    head = SngpHead(ParamStore(), cfg, 6, rng)
    for _ in range(60):
        head.normalized_weight(update=True)
    assert np.linalg.svd(head.normalized_weight(False).data, compute_uv=False)[0] == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- features


def test_rff_zero_weights():
    st_ = SngpState(np.zeros((8, 3)), np.zeros(8), np.eye(8))
    np.testing.assert_allclose(rff(np.ones(3), st_), np.full(8, math.sqrt(2 / 8)), atol=1e-15)


@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)), st.integers(0, 1000))
def test_rff_norm_bound(d, seed):
    phi = rff(d, _state(16, rng=np.random.default_rng(seed)))
    assert np.all((phi ** 2).sum(axis=-1) <= 2.0 + 1e-12)


def test_rff_scalar_loop(rng):
    st_ = _state(6, rng=rng)
    d = rng.normal(size=3) * 10
    ref = [math.sqrt(2 / 6) * math.cos(-sum(st_.W_L[i, j] * d[j] for j in range(3)) + st_.b_L[i])
           for i in range(6)]
    np.testing.assert_allclose(rff(d, st_), ref, atol=1e-13)
    np.testing.assert_allclose(rff_tensor(T.Tensor(d[None]), st_).data[0], ref, atol=1e-13)


def test_init_distribution():
    st_ = init_state(SngpConfig(rff_dim=2048, inv_lengthscale=0.05), 64, np.random.default_rng(3))
    assert st_.W_L.std() == pytest.approx(0.05, rel=0.02)
    assert st_.b_L.min() >= 0 and st_.b_L.max() < 2 * math.pi
    np.testing.assert_array_equal(st_.precision, 0.1 * np.eye(2048))


# ---------------------------------------------------------------- precision / uncertainty


def _two_dim_after_one():
    cfg = SngpConfig(rff_dim=2, ridge=0.1, discount=0.5)
    return cfg, precision_update(reset_covariance(_state(2), cfg), np.array([[1.0, 0.0]]), cfg)


def test_precision_fixture():
    _, st_ = _two_dim_after_one()
    np.testing.assert_allclose(st_.precision, [[0.55, 0.0], [0.0, 0.05]], atol=1e-15)


def test_uncertainty_fixture():
    _, st_ = _two_dim_after_one()
    assert uncertainty(st_, np.array([1.0, 0.0])) == pytest.approx(1 / 0.55, abs=1e-9)


def test_empty_batch_only_discounts():
    cfg, st_ = _two_dim_after_one()
    out = precision_update(st_, np.zeros((0, 2)), cfg)
    np.testing.assert_allclose(out.precision, 0.5 * st_.precision, atol=1e-15)


def test_reset_properties(rng):
    cfg = SngpConfig(rff_dim=8, ridge=0.1)
    st_ = _state(8, rng=rng)
    phi = rng.normal(size=8)
    fresh = uncertainty(st_, phi)
    assert fresh == pytest.approx((phi ** 2).sum() / 0.1, rel=1e-12)
    for _ in range(5):
        st_ = precision_update(st_, rng.normal(size=(4, 8)), cfg)
    assert uncertainty(st_, phi) != pytest.approx(fresh)
    once = reset_covariance(st_, cfg)
    np.testing.assert_array_equal(once.precision, 0.1 * np.eye(8))
    np.testing.assert_array_equal(reset_covariance(once, cfg).precision, once.precision)
    assert uncertainty(once, phi) == pytest.approx(fresh, rel=1e-12)


def test_unit_precision_zero_features():
    st_ = SngpState(np.zeros((8, 3)), np.zeros(8), np.eye(8))
    assert uncertainty(st_, rff(np.zeros(3), st_)) == pytest.approx(2.0, abs=1e-12)


def test_seen_direction_less_uncertain():
    cfg = SngpConfig(rff_dim=4, ridge=0.1, discount=0.9)
    st_ = reset_covariance(_state(4), cfg)
    seen, unseen = np.eye(4)[0], np.eye(4)[1]
    for _ in range(200):
        st_ = precision_update(st_, seen[None], cfg)
    assert uncertainty(st_, seen) < uncertainty(st_, unseen)


@pytest.mark.parametrize("D", [2, 8])
def test_against_dense_inverse(D):
    rng = np.random.default_rng(D)
    cfg = SngpConfig(rff_dim=D, ridge=0.1, discount=0.7)
    st_ = reset_covariance(_state(D, rng=rng), cfg)
    stream = [rng.normal(size=(3, D)) for _ in range(6)]
    for batch in stream:
        st_ = precision_update(st_, batch, cfg)
    P = _fold_left(stream, D, 0.7, 0.1)
    inv = np.linalg.inv(P)
    for phi in rng.normal(size=(5, D)):
        assert uncertainty(st_, phi) == pytest.approx(phi @ inv @ phi, abs=1e-9)
    np.testing.assert_allclose(st_.covariance() @ st_.precision, np.eye(D), atol=1e-6)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fold_left_equivalence_and_spd(seed, n_batches):
    rng = np.random.default_rng(seed)
    D, m = 5, 0.9
    cfg = SngpConfig(rff_dim=D, ridge=0.1, discount=m)
    st_ = reset_covariance(_state(D, rng=rng), cfg)
    stream = [rng.normal(size=(int(rng.integers(0, 4)), D)) for _ in range(n_batches)]
    for batch in stream:
        st_ = precision_update(st_, batch, cfg)
    np.testing.assert_allclose(st_.precision, _fold_left(stream, D, m, 0.1), atol=1e-12, rtol=0)
    np.testing.assert_array_equal(st_.precision, st_.precision.T)
    assert np.linalg.eigvalsh(st_.precision).min() > 0


@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(-5, 5)), st.integers(0, 1000))
def test_uncertainty_nonnegative_and_sign_invariant(phi, seed):
    rng = np.random.default_rng(seed)
    cfg = SngpConfig(rff_dim=6)
    st_ = _state(6, rng=rng)
    st_ = precision_update(st_, rng.normal(size=(4, 6)), cfg)
    u = uncertainty(st_, phi)
    assert np.all(u >= 0)
    np.testing.assert_allclose(uncertainty(st_, -phi), u, rtol=1e-12, atol=1e-15)


@given(st.integers(0, 10_000))
def test_observation_never_raises_its_own_uncertainty(seed):
    # compared with the same discounted step without the observation
    rng = np.random.default_rng(seed)
    cfg = SngpConfig(rff_dim=4, discount=0.8)
    st_ = precision_update(_state(4, rng=rng), rng.normal(size=(3, 4)), cfg)
    u_dir = rng.normal(size=4)
    base = rng.normal(size=(2, 4))
    without = precision_update(st_, base, cfg)
    with_obs = precision_update(st_, np.vstack([base, u_dir]), cfg)
    assert uncertainty(with_obs, u_dir) <= uncertainty(without, u_dir) + 1e-12


def test_update_is_target_independent():
    assert list(inspect.signature(precision_update).parameters) == ["state", "phi", "cfg"]


def test_non_finite_features_rejected():
    cfg = SngpConfig(rff_dim=2)
    with pytest.raises(FloatingPointError):
        precision_update(_state(2), np.array([[np.nan, 0.0]]), cfg)


def test_non_spd_precision_signalled():
    st_ = SngpState(np.zeros((2, 3)), np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(FloatingPointError):
        uncertainty(st_, np.ones(2))


# ---------------------------------------------------------------- output / loss


def test_forward_examples():
    assert not np.any(sngp_forward(T.Tensor(np.ones((1, 4))), T.Tensor(np.zeros((4, 50)))).data)
    out = sngp_forward(T.Tensor([[0.3, -1.2]]), T.Tensor([[1.0], [1.0]])).data
    assert out[0, 0] == pytest.approx(0.3 - 1.2, abs=1e-15)


@pytest.mark.parametrize("trial", range(10))
def test_gaussian_nll_gradients(trial):
    rng = np.random.default_rng(500 + trial)
    phi, y = rng.normal(size=(4, 6)), rng.normal(size=(4, 3))
    loss = lambda beta: gaussian_nll(sngp_forward(T.Tensor(phi), beta), y, beta, 0.1, 20)
    assert check(loss, [rng.normal(size=(6, 3))]) < 1e-4


def test_gaussian_nll_value(rng):
    phi, y, beta = rng.normal(size=(4, 6)), rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    ref = 0.5 * ((phi @ beta - y) ** 2).sum(axis=1).mean() + 0.1 / (2 * 20) * (beta ** 2).sum()
    got = gaussian_nll(T.Tensor(phi @ beta), y, T.Tensor(beta), 0.1, 20).item()
    assert got == pytest.approx(ref, rel=1e-12)


def test_head_gradients_for_bias_and_beta(rng):
    store = ParamStore()
    head = SngpHead(store, SngpConfig(rff_dim=8, output_dim=4, inv_lengthscale=0.5), 3, rng)
    store["sngp.beta"].data[:] = rng.normal(size=(8, 4))
    d, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))

    def loss():
        pred, _ = head(T.Tensor(d))
        return gaussian_nll(pred, y, head.beta, 0.1, 10)

    assert check_store(loss, store, prefix="sngp.beta") < 1e-4
    assert check_store(loss, store, prefix="sngp.sn.bias") < 1e-4


def test_head_buffers_round_trip(rng):
    cfg = SngpConfig(rff_dim=8, output_dim=4)
    a = SngpHead(ParamStore(), cfg, 3, rng)
    a.state = precision_update(a.state, rng.normal(size=(3, 8)), cfg)
    b = SngpHead(ParamStore(), cfg, 3, np.random.default_rng(99))
    b.load_buffers(a.buffers())
    for k, v in a.buffers().items():
        np.testing.assert_array_equal(b.buffers()[k], v)
    with pytest.raises(KeyError):
        b.load_buffers({})


@pytest.mark.parametrize("kwargs", [dict(discount=1.0), dict(discount=0.0), dict(ridge=0.0), dict(rff_dim=1)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SngpConfig(**kwargs)
