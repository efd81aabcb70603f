import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omdcpd import (
    BernoulliProduct,
    ConfigError,
    GammaFixedShape,
    GaussianIdentity,
    IdentityNotApplicable,
    InvalidParameterError,
    L1Ball,
    StepSchedule,
    batch_mle,
    omd_init,
    omd_step,
    regret_bregman,
    regret_direct,
)
from omdcpd.estimators import (
    MomState,
    mom_step,
    mom_theta,
    omd_trajectory,
    shrink_estimate,
    shrink_theta,
    universal_threshold,
)
from omdcpd.projection import IntervalClamp

from oracles import gaussian_loglik


# --- step schedule ------------------------------------------------------------

def test_schedule_values():
    assert StepSchedule()(1) == 1.0
    assert StepSchedule()(4) == 0.25
    assert StepSchedule(10)(1) == pytest.approx(1 / 11)


@pytest.mark.parametrize("spec, offset", [("harmonic", 0.0), ("shifted:3", 3.0), ("shifted:0.5", 0.5)])
def test_schedule_spec(spec, offset):
    s = StepSchedule.from_spec(spec)
    assert s.offset == offset
    assert StepSchedule.from_spec(s.spec) == s


@pytest.mark.parametrize("spec", ["shifted", "shifted:-1", "cosine"])
def test_schedule_bad_spec(spec):
    with pytest.raises(ConfigError):
        StepSchedule.from_spec(spec)


# --- mirror descent ---------------------------------------------------------

def test_gaussian_hand_trace():
    m = GaussianIdentity(1)
    s = omd_init(m, 0.0)
    s = omd_step(s, m, [1.0])
    assert s.mu_hat[0] == 1.0 and s.theta_hat[0] == 1.0
    s = omd_step(s, m, [2.0])
    assert s.mu_hat[0] == pytest.approx(1.5)


def test_gamma_hand_trace():
    m = GammaFixedShape()
    s = omd_init(m, -1.0)
    assert s.mu_hat[0] == pytest.approx(1.0)
    s = omd_step(s, m, [3.0])
    assert s.mu_hat[0] == pytest.approx(3.0)
    assert s.theta_hat[0] == pytest.approx(-1 / 3)


def test_running_mean_identity():
    rng = np.random.default_rng(0)
    m = GaussianIdentity(3)
    for _ in range(50):
        x = rng.normal(loc=rng.normal(size=3), size=(rng.integers(1, 60), 3))
        s = omd_init(m, rng.normal(size=3))
        for i, xi in enumerate(x, 1):
            s = omd_step(s, m, xi)
            np.testing.assert_allclose(s.mu_hat, x[:i].mean(axis=0), rtol=0, atol=1e-12)


def test_bernoulli_shifted_schedule_is_pseudo_count():
    # eta_t = 1/(t + c) gives the mean (c mu0 + sum x) / (t + c)
    rng = np.random.default_rng(1)
    m = BernoulliProduct(4)
    c, mu0 = 3.0, 0.2
    x = rng.integers(0, 2, size=(25, 4)).astype(float)
    s = omd_init(m, np.log(mu0 / (1 - mu0)), schedule=StepSchedule(c))
    for i, xi in enumerate(x, 1):
        s = omd_step(s, m, xi)
        np.testing.assert_allclose(s.mu_hat, (c * mu0 + x[:i].sum(axis=0)) / (i + c), atol=1e-12)


def test_non_anticipation():
    rng = np.random.default_rng(2)
    m = GaussianIdentity(2)
    x = rng.normal(size=(30, 2))
    est, _ = omd_trajectory(m, [0.0, 0.0], x)
    np.testing.assert_array_equal(est[0], [0.0, 0.0])
    for t in range(1, 30):
        # estimate scoring x[t] comes from x[:t] alone, whatever follows
        x_alt = x.copy()
        x_alt[t:] = rng.normal(size=(30 - t, 2)) * 50
        est_alt, _ = omd_trajectory(m, [0.0, 0.0], x_alt)
        np.testing.assert_array_equal(est_alt[: t + 1], est[: t + 1])


def test_projection_active_refreshes_mean():
    m = GaussianIdentity(2)
    s = omd_init(m, [0.0, 0.0], feasible_set=L1Ball(1.0))
    s = omd_step(s, m, [3.0, 0.0])
    np.testing.assert_allclose(s.theta_hat, [1.0, 0.0])
    np.testing.assert_allclose(s.mu_hat, [1.0, 0.0])
    assert s.projection_used


def test_bad_observation_shape():
    m = GaussianIdentity(2)
    with pytest.raises(InvalidParameterError):
        omd_step(omd_init(m, 0.0), m, [1.0, 2.0, 3.0])


def test_gamma_estimate_stays_in_domain():
    m = GammaFixedShape()
    s = omd_init(m, -1.0)
    for x in [1e9, 1e12, 1e15]:
        s = omd_step(s, m, [x])
        assert s.theta_hat[0] <= -1e-8


# --- batch MLE ------------------------------------------------------------------

def test_batch_mle_examples():
    assert batch_mle(GaussianIdentity(1), [[2.0], [4.0]]).theta[0] == pytest.approx(3.0)
    assert batch_mle(GammaFixedShape(), [[0.5], [1.5]]).theta[0] == pytest.approx(-1.0)
    r = batch_mle(BernoulliProduct(1), [[1], [0], [1], [1]])
    assert r.theta[0] == pytest.approx(np.log(3))
    assert not r.clamped


def test_batch_mle_boundary_clamps():
    r = batch_mle(BernoulliProduct(2), [[0, 1], [0, 1]])
    assert r.clamped
    assert np.all(np.isfinite(r.theta))


def test_batch_mle_empty():
    with pytest.raises(InvalidParameterError):
        batch_mle(GaussianIdentity(1), np.zeros((0, 1)))


def test_batch_mle_beats_perturbations():
    rng = np.random.default_rng(3)
    x = rng.normal(loc=[1, -2], size=(40, 2))
    th = batch_mle(GaussianIdentity(2), x).theta
    best = gaussian_loglik(th, x)
    for _ in range(20):
        assert gaussian_loglik(th + rng.normal(scale=0.1, size=2), x) <= best


# --- regret -------------------------------------------------------------------

def _run(m, theta0, x, **kw):
    est, state = omd_trajectory(m, theta0, x, **kw)
    return regret_direct(m, theta0, x, est), state


def test_regret_examples():
    m = GaussianIdentity(1)
    r0, _ = _run(m, 0.0, [[0.0]] * 5)
    assert r0 == 0.0
    r1, _ = _run(m, 0.0, [[1.0]])
    assert r1 == pytest.approx(0.5)
    r2, s = _run(m, 0.0, [[1.0], [2.0]])
    assert r2 == pytest.approx(0.75)
    assert regret_bregman(s) == pytest.approx(0.75)


def test_regret_bregman_trivial_cases():
    m = GammaFixedShape()
    _, s = omd_trajectory(m, -1.0, [[1.0]])
    assert regret_bregman(s) == 0.0
    g = GaussianIdentity(2)
    _, s = omd_trajectory(g, [0.5, -1.0], [[0.5, -1.0]])
    assert regret_bregman(s) == 0.0


def test_regret_identity_preconditions():
    m = GaussianIdentity(1)
    _, s = omd_trajectory(m, 0.0, [[1.0]], schedule=StepSchedule(2))
    with pytest.raises(IdentityNotApplicable):
        regret_bregman(s)
    _, s = omd_trajectory(m, 0.0, [[3.0]], feasible_set=IntervalClamp(-1, 1))
    with pytest.raises(IdentityNotApplicable):
        regret_bregman(s)


def test_regret_length_mismatch():
    with pytest.raises(InvalidParameterError):
        regret_direct(GaussianIdentity(1), 0.0, [[1.0], [2.0]], [[0.0]])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 20), min_size=1, max_size=40), st.floats(0.1, 5))
def test_regret_identity_gamma_property(xs, beta0):
    m = GammaFixedShape()
    x = np.array(xs)[:, None]
    r, s = _run(m, -beta0, x)
    assert regret_bregman(s) == pytest.approx(r, rel=1e-8, abs=1e-9)


def test_regret_grows_sublinearly():
    rng = np.random.default_rng(4)
    d, n, T = 3, 300, 256
    m = GaussianIdentity(d)
    curve = np.zeros(T)
    for _ in range(n):
        theta = rng.normal(size=d)
        x = rng.normal(loc=theta, size=(T, d))
        est, _ = omd_trajectory(m, np.zeros(d), x)
        losses = m.log_partition(est) - np.sum(est * x, axis=1)
        cums = np.cumsum(x, axis=0) / np.arange(1, T + 1)[:, None]
        hind = np.arange(1, T + 1) * -0.5 * np.sum(cums**2, axis=1)
        curve += np.cumsum(losses) - hind
    curve /= n
    incs = [curve[2 * t - 1] - curve[t - 1] for t in (8, 16, 32, 64, 128)]
    # d log t growth: doubling t adds about (d/2) log 2 each time, never a linear jump
    assert max(incs) < 2 * d
    assert incs[-1] < incs[0] + 0.5


# --- baselines ------------------------------------------------------------------

@pytest.mark.parametrize("data, beta", [([], 1.0), ([1.0], 1.0), ([0.1, 0.1], 2.5)])
def test_mom_examples(data, beta):
    s = MomState()
    for x in data:
        s = mom_step(s, [x])
    assert s.beta_hat == pytest.approx(beta)
    assert s.theta[0] == pytest.approx(-beta)


def test_mom_theta_vectorised_matches_state():
    th = mom_theta(np.array([0, 2]), np.array([[0.0], [0.2]]))
    np.testing.assert_allclose(th[:, 0], [-1.0, -2.5])


def test_shrink_examples():
    np.testing.assert_array_equal(shrink_estimate([1.0, 0.2], "soft", 0.0), [1.0, 0.2])
    np.testing.assert_allclose(shrink_estimate([1.0, 0.2], "soft", 0.5), [0.5, 0.0])
    np.testing.assert_allclose(shrink_estimate([1.0, 0.2], "hard", 0.5), [1.0, 0.0])
    np.testing.assert_allclose(shrink_estimate([-1.0, 0.2], "soft", 0.5), [-0.5, 0.0])


def test_shrink_rejects():
    with pytest.raises(ConfigError):
        shrink_estimate([1.0], "medium", 0.1)
    with pytest.raises(ConfigError):
        shrink_estimate([1.0], "soft", -0.1)


def test_shrink_theta_before_data_is_null():
    th0 = np.array([0.0, 1.0])
    np.testing.assert_array_equal(shrink_theta(0, np.zeros(2), th0), th0)
    assert universal_threshold(20, 4) == pytest.approx(np.sqrt(2 * np.log(20) / 4))
