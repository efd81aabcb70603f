import numpy as np
import pytest
from scipy.special import logsumexp

from omdcpd import BernoulliProduct, ConfigError, Detector, DetectorSpec, GammaFixedShape, GaussianIdentity
from omdcpd.detectors import (
    CusumState,
    GlrState,
    cusum_step,
    detector_init,
    detector_step,
    glr_step,
    sprt_init,
    sprt_step,
)
from omdcpd.bench.engine import BatchDetector
from omdcpd.estimators import omd_trajectory
from omdcpd.expfam import log_density_ratio
from omdcpd.projection import L1Ball


# --- spec parsing -------------------------------------------------------------

@pytest.mark.parametrize("text, kind, est, fset, window", [
    ("acm", "acm", "omd", "full", 100),
    ("asr/l1:5", "asr", "omd", "l1:5", 100),
    ("cusum/fixed:1", "cusum", "fixed:1", "full", 100),
    ("glr/w=50", "glr", "glr-window", "full", 50),
    ("acm/w=inf", "acm", "omd", "full", None),
    ("asr/mom", "asr", "mom", "full", 100),
])
def test_spec_parsing(text, kind, est, fset, window):
    s = DetectorSpec.from_string(text)
    assert (s.kind, s.estimator, s.feasible_set.spec, s.window) == (kind, est, fset, window)
    assert DetectorSpec.from_string(s.spec) == s


@pytest.mark.parametrize("text", ["median", "cusum", "acm/glr-window", "acm/w=0", "acm/bogus"])
def test_spec_rejects(text):
    with pytest.raises(ConfigError):
        DetectorSpec.from_string(text)


def test_spec_validate_against_model():
    with pytest.raises(ConfigError):
        DetectorSpec.from_string("acm/l1:5").validate(GammaFixedShape())
    with pytest.raises(ConfigError):
        DetectorSpec.from_string("acm/mom").validate(GaussianIdentity(2))
    with pytest.raises(ConfigError):
        DetectorSpec.from_string("acm/shrink:soft,auto").validate(BernoulliProduct(2))


def test_fixed_theta_forms():
    g = GammaFixedShape()
    assert DetectorSpec.from_string("cusum/fixed:classical=2").fixed_theta(g)[0] == -2.0
    np.testing.assert_array_equal(DetectorSpec.from_string("cusum/fixed:1").fixed_theta(GaussianIdentity(3)), [1, 1, 1])


# --- SPRT ------------------------------------------------------------------------

def test_sprt_hand_trace():
    m = GaussianIdentity(1)
    s = sprt_init(m, [0.0])
    s, a = sprt_step(s, m, np.zeros(1), [1.0], b=10)
    assert a.statistic == 0.0
    s, a = sprt_step(s, m, np.zeros(1), [2.0], b=10)
    assert a.statistic == pytest.approx(1.5)
    assert not a.stopped


def test_sprt_negative_threshold_stops_immediately():
    det = Detector("sprt", GaussianIdentity(1), 0.0, -1.0)
    a = det.update([123.0])
    assert a.stopped and a.stop_time == 1


def test_sprt_uses_inclusive_threshold():
    det = Detector("sprt", GaussianIdentity(1), 0.0, 0.0)
    assert det.update([0.0]).stopped


# --- ACM / ASR ------------------------------------------------------------------

def test_first_step_is_zero():
    for m, th0, x in [(GaussianIdentity(2), 0.0, [3.0, -1.0]), (GammaFixedShape(), -1.0, [5.0]),
                      (BernoulliProduct(3), 0.0, [1, 0, 1])]:
        for kind in ("acm", "asr"):
            a = Detector(kind, m, th0, 5.0).update(x)
            assert a.statistic == 0.0 and a.stop_time == 1


@pytest.mark.parametrize("kind", ["acm", "asr"])
def test_negative_threshold_alarms_at_once(kind):
    a = Detector(kind, GaussianIdentity(1), 0.0, -0.5).update([0.0])
    assert a.stopped and a.stop_time == 1


def test_two_branch_statistics():
    # after x = (1, 2): branch k=1 has 0 + 1.5, branch k=2 has 0
    m = GaussianIdentity(1)
    acm, asr = Detector("acm", m, 0.0, 99), Detector("asr", m, 0.0, 99)
    for x in ([1.0], [2.0]):
        a1, a2 = acm.update(x), asr.update(x)
    assert a1.statistic == pytest.approx(1.5)
    assert a1.change_point_estimate == 1
    assert a2.statistic == pytest.approx(np.log(np.exp(1.5) + 1))


def test_branch_values_recomputed_from_prefix():
    rng = np.random.default_rng(0)
    m = GaussianIdentity(2)
    x = rng.normal(loc=0.5, size=(60, 2))
    det = Detector("asr/w=inf", m, 0.0, np.inf)
    for t in range(1, 61):
        det.update(x[t - 1])
        if t % 15:
            continue
        logs = []
        for k in range(1, t + 1):
            est, _ = omd_trajectory(m, np.zeros(2), x[k - 1:t])
            logs.append(np.sum(log_density_ratio(m, est, np.zeros(2), x[k - 1:t])))
        assert det.statistic == pytest.approx(logsumexp(logs), rel=1e-9, abs=1e-9)


def test_window_evicts_oldest():
    m = GaussianIdentity(1)
    det = Detector("acm/w=3", m, 0.0, 99)
    for x in np.linspace(0, 2, 8):
        det.update([x])
    assert [br.k for br in det.state.branches] == [6, 7, 8]


def test_wide_window_equals_unbounded():
    rng = np.random.default_rng(1)
    m = GammaFixedShape()
    x = rng.exponential(size=(40, 1))
    a = Detector("asr/w=40", m, -1.0, np.inf)
    b = Detector("asr/w=inf", m, -1.0, np.inf)
    for xi in x:
        assert a.update(xi).statistic == b.update(xi).statistic


@pytest.mark.parametrize("model, th0, draw", [
    (GaussianIdentity(3), 0.0, lambda r: r.normal(size=3)),
    (GammaFixedShape(), -1.0, lambda r: r.exponential(size=1)),
    (BernoulliProduct(4), 0.0, lambda r: r.integers(0, 2, size=4)),
])
def test_asr_dominates_acm(model, th0, draw):
    rng = np.random.default_rng(2)
    for _ in range(20):
        acm, asr = Detector("acm/w=10", model, th0, np.inf), Detector("asr/w=10", model, th0, np.inf)
        for t in range(30):
            x = draw(rng)
            a, s = acm.update(x), asr.update(x)
            assert s.statistic >= a.statistic
            if t >= 1:
                assert s.statistic > a.statistic


def test_detector_step_requires_branch_kind():
    with pytest.raises(ConfigError):
        detector_init(DetectorSpec("glr"), 1.0)


def test_run_stops_at_first_alarm():
    m = GaussianIdentity(1)
    det = Detector("acm", m, 0.0, 3.0)
    a = det.run([[2.0]] * 50)
    assert a.stopped and a.stop_time < 50
    assert det.state.t == a.stop_time


# --- CUSUM and GLR ---------------------------------------------------------------

def test_cusum_examples():
    m = GaussianIdentity(1)
    th0, th1 = np.zeros(1), np.ones(1)
    s, a = cusum_step(CusumState(9), m, th0, th1, [1.5])
    assert a.statistic == pytest.approx(1.0)
    s, a = cusum_step(CusumState(9, W=0.3), m, th0, th1, [-5.0])
    assert a.statistic == 0.0
    s = CusumState(9)
    for _ in range(10):
        s, a = cusum_step(s, m, th0, th1, [0.5])
        assert a.statistic == 0.0


def test_cusum_rejects_null_alternative():
    m = GaussianIdentity(1)
    with pytest.raises(ConfigError):
        cusum_step(CusumState(1), m, np.zeros(1), np.zeros(1), [0.0])


def test_glr_examples():
    m = GaussianIdentity(1)
    s, a = glr_step(GlrState(9), m, np.zeros(1), [0.0])
    assert a.statistic == 0.0
    s, a = glr_step(GlrState(9), m, np.zeros(1), [2.0])
    s, a = glr_step(s, m, np.zeros(1), [2.0])
    assert a.statistic == pytest.approx(4.0)


def test_glr_dominates_acm():
    rng = np.random.default_rng(3)
    m = GaussianIdentity(2)
    for _ in range(100):
        glr, acm = Detector("glr/w=20", m, 0.0, np.inf), Detector("acm/w=20", m, 0.0, np.inf)
        for x in rng.normal(loc=0.3, size=(15, 2)):
            assert glr.update(x).statistic >= acm.update(x).statistic - 1e-12


# --- streaming versus batched engine ----------------------------------------------

ENGINE_CASES = [
    ("acm", GaussianIdentity(3), 0.0),
    ("asr/l1:1.5/w=7", GaussianIdentity(3), 0.0),
    ("sprt", GaussianIdentity(2), 0.0),
    ("asr/w=inf", GammaFixedShape(), -1.0),
    ("acm/clamp:-3,-0.2/w=6", GammaFixedShape(), -1.0),
    ("asr/mom/w=5", GammaFixedShape(), -1.0),
    ("acm/shrink:soft,auto/w=8", GaussianIdentity(4), 0.0),
    ("cusum/fixed:1", GaussianIdentity(2), 0.0),
    ("glr/w=6", GaussianIdentity(2), 0.0),
    ("glr/w=6", BernoulliProduct(3), np.log(0.25)),
    ("acm/w=5", BernoulliProduct(3), np.log(0.25)),
    ("asr/shifted:3/w=5", BernoulliProduct(3), np.log(0.25)),
    ("acm/clamp:-2,2/w=5", BernoulliProduct(3), np.log(0.25)),
    ("asr/clamp:-1,1/shifted:2/w=7", BernoulliProduct(4), np.log(0.25)),
]


@pytest.mark.parametrize("text, model, th0", ENGINE_CASES, ids=[c[0] + "-" + c[1].name for c in ENGINE_CASES])
@pytest.mark.parametrize("backend", ["numpy", "compiled"])
def test_batch_matches_streaming(text, model, th0, backend):
    rng = np.random.default_rng(4)
    spec = DetectorSpec.from_string(text)
    n, T = 5, 18
    theta = model.as_natural(th0) + (0.4 if not isinstance(model, GammaFixedShape) else 0.3)
    x = model.sample(theta, rng, size=(n, T))
    batch = BatchDetector(spec, model, th0, n, capacity=4, backend=backend)
    dets = [Detector(spec, model, th0, np.inf) for _ in range(n)]
    for t in range(T):
        phi = model.suff_stat(x[:, t]).reshape(n, model.dim)
        got = batch.step(phi)
        want = [d.update(x[i, t]).statistic for i, d in enumerate(dets)]
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_l1_projection_drives_branch_estimates():
    m = GaussianIdentity(2)
    det = Detector(DetectorSpec("acm", feasible_set=L1Ball(1.0)), m, 0.0, np.inf)
    det.update([5.0, 5.0])
    est = det.state.branches[0].estimator
    assert np.abs(est.theta_hat).sum() == pytest.approx(1.0)


def test_sprt_null_mean_one_with_bounded_estimator():
    # |theta_hat| <= 0.5 keeps the second moment of every factor below e^0.25,
    # so the sample mean of the likelihood ratio has a usable standard error
    m = GaussianIdentity(1)
    n = 50_000
    x = np.random.default_rng(5).normal(size=(n, 10, 1))
    det = BatchDetector(DetectorSpec.from_string("sprt/l1:0.5"), m, 0.0, n)
    for t in range(10):
        lam = np.exp(det.step(x[:, t]))
    assert abs(lam.mean() - 1) < 4 * lam.std() / np.sqrt(n)
