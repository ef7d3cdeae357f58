import numpy as np
import pytest
from scipy.stats import rankdata
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel_err
from svartrust.calibration import (
    N_MLP_PARAMS,
    TAU_MAX,
    TAU_MIN,
    CalibratedPrior,
    TrustParams,
    calibrate,
    calibrate_grouped,
    init_theta,
    l1_weights,
    precision_mask,
    realized_tau,
    spearman_precalibrate,
    trust_features,
    trust_mlp_backward,
    trust_mlp_forward,
    uniform_calibration,
)
from svartrust.datagen import TimeSeriesData
from svartrust.errors import NeighborhoodTooSmallError
from svartrust.prior import PriorMatrix


def _scalar(p, tau):
    P = np.full((3, 3), p)
    return calibrate(PriorMatrix(P), np.full((3, 3), tau)).p_hat[0, 1]


def _hat(v):
    return CalibratedPrior(np.atleast_2d(np.asarray(v, dtype=float)))


def test_unit_temperature_is_identity():
    assert _scalar(0.9, 1.0) == pytest.approx(0.9, abs=1e-12)


def test_vanishing_temperature_flattens():
    for p in (0.01, 0.3, 0.9, 0.999):
        assert abs(_scalar(p, 1e-6) - 0.5) < 1e-5


def test_double_temperature_value():
    # sigmoid(2 ln 9) = 81/82 exactly
    assert _scalar(0.9, 2.0) == pytest.approx(81 / 82, abs=1e-12)
    assert round(81 / 82, 5) == 0.98780


def test_calibrated_diagonal_is_half():
    P = np.random.default_rng(0).random((5, 5))
    p_hat = calibrate(PriorMatrix(P), np.full((5, 5), 1.7)).p_hat
    assert np.all(np.diag(p_hat) == 0.5)
    assert np.all((p_hat > 0) & (p_hat < 1))


def test_grouped_calibration_uses_group_temperatures():
    P = np.full((3, 3), 0.9)
    groups = np.array([[-1, 0, 1], [1, -1, 0], [0, 1, -1]])
    p_hat = calibrate_grouped(PriorMatrix(P), [1.0, 2.0], groups).p_hat
    assert p_hat[0, 1] == pytest.approx(0.9)
    assert p_hat[0, 2] == pytest.approx(81 / 82)


def test_penalty_weight_examples():
    np.testing.assert_allclose(l1_weights(_hat([0.5, 0.99, 0.01])), [[1.0, 0.51, 1.49]])
    np.testing.assert_allclose(precision_mask(_hat([0.5, 1.0])), [[0.501, 0.001]])


def test_flat_prior_gives_plain_penalties():
    P = np.random.default_rng(1).random((6, 6))
    cal = calibrate(PriorMatrix(P), np.full((6, 6), 1e-9))
    np.testing.assert_allclose(precision_mask(cal), 0.501, atol=1e-8)
    np.testing.assert_allclose(l1_weights(cal), 1.0, atol=1e-8)
    np.testing.assert_array_equal(precision_mask(uniform_calibration(6)), 0.501)


def test_temperature_monotonicity_grid():
    taus = np.linspace(0.01, 2.0, 50)
    for p in (0.05, 0.3, 0.49, 0.51, 0.7, 0.95):
        vals = np.array([_scalar(p, t) for t in taus])
        diffs = np.diff(vals)
        if p > 0.5:
            assert np.all(diffs > 0)
        else:
            assert np.all(diffs < 0)
    flat = [_scalar(0.5, t) for t in taus]
    assert np.all(np.array(flat) == 0.5)


def test_temperature_derivative_bound(rng):
    h = 1e-6
    for _ in range(200):
        p = rng.uniform(0.001, 0.999)
        tau = rng.uniform(0.01, 2.0)
        deriv = (_scalar(p, tau + h) - _scalar(p, tau - h)) / (2 * h)
        bound = abs(np.log(p / (1 - p))) / 4
        assert bound - abs(deriv) >= -1e-8


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_penalties_lipschitz(a, b):
    ca, cb = l1_weights(_hat([a])), l1_weights(_hat([b]))
    oa, ob = precision_mask(_hat([a])), precision_mask(_hat([b]))
    assert abs(ca - cb).item() <= abs(a - b) + 1e-15
    assert abs(oa - ob).item() <= abs(a - b) + 1e-15


def test_features_flat_prior_zero_weights():
    z = trust_features(PriorMatrix.uniform(5), np.zeros((2, 5, 5)))
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(z[off], np.tile([0.5, 0.5, 0, 0, 0, 0], (20, 1)), atol=1e-12)


def test_feature_agreement_example():
    P = np.full((4, 4), 0.2)
    P[0, 1] = 0.99
    W = np.zeros((4, 4))
    W[0, 1] = -0.7
    W[2, 3] = 0.35
    z = trust_features(PriorMatrix(P), W)
    assert z[0, 1, 3] == 1.0
    assert z[0, 1, 5] == pytest.approx(0.98, abs=1e-12)
    # agreement identity holds everywhere
    np.testing.assert_allclose(z[..., 5], 4 * (z[..., 0] - 0.5) * (z[..., 3] - 0.5)
                               * ~np.eye(4, dtype=bool), atol=1e-15)


def _neighbour_oracle(M, i, j):
    d = M.shape[0]
    vals = [M[k, j] for k in range(d) if k not in (i, j)]
    vals += [M[i, l] for l in range(d) if l not in (i, j)]
    return np.mean(vals), np.std(vals)


def test_neighbourhood_features_match_loops(rng):
    d = 7
    P = rng.random((d, d))
    W = rng.normal(size=(d, d))
    z = trust_features(PriorMatrix(P), W)
    Pm = PriorMatrix(P).values
    Wn = np.abs(W) * ~np.eye(d, dtype=bool)
    Wn = Wn / Wn.max()
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            m, s = _neighbour_oracle(Pm, i, j)
            assert z[i, j, 1] == pytest.approx(m, abs=1e-12)
            assert z[i, j, 2] == pytest.approx(s, abs=1e-12)
            assert z[i, j, 4] == pytest.approx(_neighbour_oracle(Wn, i, j)[0], abs=1e-12)


def test_features_directional():
    P = np.full((4, 4), 0.3)
    P[0, 2] = 0.9
    z = trust_features(PriorMatrix(P), np.zeros((4, 4)))
    assert not np.allclose(z[0, 1], z[1, 0])


def test_features_need_three_nodes():
    with pytest.raises(NeighborhoodTooSmallError):
        trust_features(PriorMatrix.uniform(2), np.zeros((2, 2)))


def test_mlp_zero_network():
    tau = trust_mlp_forward(np.random.default_rng(0).random((4, 4, 6)), np.zeros(N_MLP_PARAMS), 0.0)
    np.testing.assert_allclose(tau, TAU_MIN + (TAU_MAX - TAU_MIN) / 2)
    assert tau[0, 0] == pytest.approx(1.0005)


def test_mlp_saturates_at_upper_bound():
    tau = trust_mlp_forward(np.zeros((3, 3, 6)), np.zeros(N_MLP_PARAMS), 20.0)
    assert np.all(np.abs(tau - TAU_MAX) < 1e-6)


def test_mlp_output_range(rng):
    for _ in range(100):
        theta = rng.normal(scale=rng.uniform(0.1, 20), size=N_MLP_PARAMS)
        z = rng.normal(scale=5, size=(100, 6))
        tau = trust_mlp_forward(z, theta, rng.normal(scale=10))
        assert np.all(tau >= TAU_MIN) and np.all(tau <= TAU_MAX)


def test_mlp_jacobian_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(100):
        theta = rng.normal(scale=0.5, size=N_MLP_PARAMS)
        b = rng.normal()
        z = rng.normal(size=(6,))
        _, cache = trust_mlp_forward(z, theta, b, return_cache=True)
        grad, db = trust_mlp_backward(np.array(1.0), cache)
        fd = np.empty(N_MLP_PARAMS)
        for k in range(N_MLP_PARAMS):
            e = np.zeros(N_MLP_PARAMS)
            e[k] = h
            fd[k] = (trust_mlp_forward(z, theta + e, b) - trust_mlp_forward(z, theta - e, b)) / (2 * h)
        fd_b = (trust_mlp_forward(z, theta, b + h) - trust_mlp_forward(z, theta, b - h)) / (2 * h)
        assert rel_err(grad, fd) < 1e-5
        assert db == pytest.approx(fd_b, rel=1e-5)


def test_init_theta_is_seeded_and_bounded():
    a, b = init_theta(3), init_theta(3)
    assert np.array_equal(a, b) and np.abs(a).max() <= 0.1


def test_realized_tau_variants():
    groups = np.array([[-1, 0], [1, -1]])
    grouped = realized_tau(TrustParams("grouped", tau=[0.2, 1.5]), groups)
    np.testing.assert_array_equal(grouped, [[0, 0.2], [1.5, 0]])
    fixed = realized_tau(TrustParams("fixed", tau_const=0.7), groups)
    np.testing.assert_array_equal(fixed, [[0, 0.7], [0.7, 0]])


def test_trust_params_json_round_trip():
    t = TrustParams("trust_mlp", theta=init_theta(1), bias_b=0.3)
    back = TrustParams.from_json(t.to_json())
    assert np.array_equal(back.theta, t.theta) and back.bias_b == 0.3


def _data(seed, d=20, T=200):
    X = np.random.default_rng(seed).normal(size=(T, d))
    X[:, 1] += X[:, 0]
    X[:, 3] += 0.5 * X[:, 2]
    return TimeSeriesData(X, 0)


def test_spearman_perfect_prior():
    data = _data(0)
    corr = np.abs(np.corrcoef(data.observations, rowvar=False))
    tau, bias, rho = spearman_precalibrate(data, PriorMatrix(corr))
    assert rho == pytest.approx(1.0)
    assert tau == pytest.approx(TAU_MAX) and bias == 6.0


def test_spearman_reversed_prior():
    data = _data(1)
    corr = np.abs(np.corrcoef(data.observations, rowvar=False))
    off = ~np.eye(20, dtype=bool)
    P = np.zeros((20, 20))
    P[off] = 1 - rankdata(corr[off]) / off.sum()
    tau, bias, rho = spearman_precalibrate(data, PriorMatrix(P))
    assert rho == pytest.approx(-1.0)
    assert tau == TAU_MIN and bias == -6.0


def test_spearman_independent_prior():
    rhos = []
    for s in range(100):
        prior = PriorMatrix(np.random.default_rng(1000 + s).random((20, 20)))
        rhos.append(spearman_precalibrate(_data(s), prior)[2])
    assert np.mean(np.abs(rhos)) < 0.1


def test_spearman_constant_column():
    X = np.random.default_rng(2).normal(size=(50, 4))
    X[:, 2] = 1.0
    tau, _, rho = spearman_precalibrate(TimeSeriesData(X, 0), PriorMatrix.uniform(4, 0.3))
    assert rho == 0.0 and tau == TAU_MIN
