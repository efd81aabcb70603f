"""Vectorised Monte-Carlo engine.

Many independent streams advance in lockstep; each detector's per-path state
is held in stacked arrays with a ring of ``w`` branch slots.  Because every
path shares the time index, slot counts and step sizes are shared too.

Each path owns a ``numpy.random.Generator`` seeded from its trial seed and
draws its data in chunks, so a path's sample sequence does not depend on how
many other paths are running or when they stop.  Running the same seeds at
different thresholds therefore replays identical sample paths.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..detectors import DetectorSpec
from ..errors import ConfigError
from ..estimators import mle_from_mean, mom_theta, omd_update, shrink_theta
from ..expfam import BernoulliProduct, ExponentialFamilyModel
from ..projection import FullSpace, IntervalClamp, L1Ball
from . import kernels


def stable_hash(value) -> int:
    return zlib.crc32(repr(value).encode())


def trial_seeds(master: int, detector: str, sweep, n: int, offset: int = 0):
    """Per-trial seed sequences derived from (master, detector, sweep, trial)."""
    key = (stable_hash(detector), stable_hash(sweep))
    return [
        np.random.SeedSequence(int(master), spawn_key=key + (offset + i,)) for i in range(n)
    ]


# ---------------------------------------------------------------------------
# data sources
# ---------------------------------------------------------------------------

class IidSource:
    """i.i.d. samples from ``model`` at a per-path parameter.

    ``theta`` is a fixed natural parameter or a callable ``rng -> theta`` that
    is evaluated once per path before any data are drawn (random sparse
    supports and similar).
    """

    def __init__(self, model: ExponentialFamilyModel, theta):
        self.model = model
        self.theta = theta

    def start(self, rng):
        th = self.theta(rng) if callable(self.theta) else self.theta
        return self.model.as_natural(th)

    def draw(self, rng, theta, size: int):
        x = self.model.sample(theta, rng, size=size)
        return self.model.suff_stat(x).reshape(size, self.model.dim)


# ---------------------------------------------------------------------------
# batched detector state
# ---------------------------------------------------------------------------

def _lse(a, axis=-1):
    m = np.max(a, axis=axis)
    return m + np.log(np.sum(np.exp(a - np.expand_dims(m, axis)), axis=axis))


class BatchDetector:
    """Stacked detector state for ``n`` paths.

    ``step(phi)`` consumes one sufficient statistic per path (shape ``(n, d)``)
    and returns the detection statistic per path.

    ``backend="compiled"`` routes mirror-descent and GLR branches through the
    fused loops in :mod:`omdcpd.bench.kernels`; ``"numpy"`` keeps everything in
    whole-array numpy and serves as the reference.
    """

    def __init__(self, spec: DetectorSpec, model: ExponentialFamilyModel, theta0, n: int,
                 capacity: int = 1024, backend: str = "compiled"):
        spec.validate(model)
        if backend not in ("compiled", "numpy"):
            raise ConfigError(f"unknown backend {backend!r}")
        self.spec, self.model, self.n = spec, model, n
        self.theta0 = model.as_natural(theta0)
        self.logpart0 = float(model.log_partition(self.theta0))
        self.mu0 = model.mean(self.theta0)
        self.t = 0
        d = model.dim
        kind = spec.kind
        self.mode = "numpy"
        if backend == "compiled" and (spec.estimator == "omd" or kind == "glr"):
            self.mode = "kernel"
            if (isinstance(model, BernoulliProduct) and kind != "sprt" and spec.window is not None
                    and isinstance(spec.feasible_set, (FullSpace, IntervalClamp))
                    and np.all(self.theta0 == self.theta0[0])):
                self.mode = "bernoulli"
        if kind == "cusum":
            self.theta1 = spec.fixed_theta(model)
            self.W = np.zeros(n)
            return
        if kind == "sprt":
            self.W = None
            self.width = None
            self.loglam = np.zeros((n, 1))
        else:
            self.width = spec.window
            cap = spec.window if spec.window is not None else capacity
            self.loglam = np.zeros((n, cap))
        cap = self.loglam.shape[1]
        self.count = np.zeros(cap, dtype=np.int64)
        est = spec.estimator
        if self.mode != "numpy":
            self.stat = np.empty(n)
            self.fam = kernels.family_code(model)
            fs = spec.feasible_set
            self.proj = 1 if isinstance(fs, L1Ball) else (2 if isinstance(fs, IntervalClamp) else 0)
            self.radius = float(fs.radius) if isinstance(fs, L1Ball) else 0.0
            self.lo = float(fs.lo) if isinstance(fs, IntervalClamp) else -np.inf
            self.hi = float(fs.hi) if isinstance(fs, IntervalClamp) else np.inf
        if self.mode == "bernoulli":
            # per-coordinate success counts (GLR) or automaton states (OMD)
            th0 = float(self.theta0[0])
            if kind == "glr":
                self.succ = np.zeros((n, cap, d), dtype=np.int16)
                self.glr_tab = kernels.bernoulli_glr_table(th0, cap)
            else:
                self.succ = np.zeros((n, cap, d), dtype=np.int32)
                self.fsm = kernels.bernoulli_automaton(th0, float(spec.schedule.offset), cap, self.lo, self.hi)
            return
        if est == "omd":
            self.mu = np.broadcast_to(self.mu0, (n, cap, d)).copy()
            self.theta = np.broadcast_to(self.theta0, (n, cap, d)).copy()
            self.logpart = np.full((n, cap), self.logpart0)
        elif est.startswith("fixed"):
            th1 = spec.fixed_theta(model)
            self.theta = np.broadcast_to(th1, (n, cap, d)).copy()
            self.logpart = np.full((n, cap), float(model.log_partition(th1)))
        else:
            self.total = np.zeros((n, cap, d))
        if est == "mom":
            self.mom_s0 = 1.0 / float(-self.theta0[0])
        if est.startswith("shrink"):
            self.shrink_mode, self.shrink_thr = spec.shrink_params()

    # -- bookkeeping ---------------------------------------------------------
    def _arrays(self):
        return [k for k in ("W", "loglam", "mu", "theta", "logpart", "total", "succ", "stat")
                if getattr(self, k, None) is not None]

    def keep(self, mask):
        """Drop paths where ``mask`` is False."""
        for k in self._arrays():
            setattr(self, k, getattr(self, k)[mask])
        self.n = int(np.count_nonzero(mask))

    def _grow(self):
        cap = self.loglam.shape[1]
        pad = lambda a, fill: np.concatenate([a, np.full(a.shape[:1] + (cap,) + a.shape[2:], fill)], axis=1)
        self.loglam = pad(self.loglam, 0.0)
        self.count = np.concatenate([self.count, np.zeros(cap, dtype=np.int64)])
        for k, fill in (("mu", 0.0), ("theta", 0.0), ("logpart", 0.0), ("total", 0.0)):
            if getattr(self, k, None) is not None:
                setattr(self, k, pad(getattr(self, k), fill))

    # -- one step -------------------------------------------------------------
    def step(self, phi):
        self.t += 1
        kind, model = self.spec.kind, self.model
        if kind == "cusum":
            inc = (phi @ (self.theta1 - self.theta0)) - float(model.log_partition(self.theta1)) + self.logpart0
            self.W = np.maximum(self.W + inc, 0.0)
            return self.W

        if kind == "sprt":
            m = 1
        else:
            if self.width is None and self.t > self.loglam.shape[1]:
                self._grow()
            cap = self.loglam.shape[1]
            s = (self.t - 1) % cap
            self._spawn(s)
            m = min(self.t, cap)

        if self.mode != "numpy":
            return self._kernel_step(phi, m)
        if kind == "glr":
            return self._glr(phi, m)

        theta, logpart = self._theta(m)
        ph = phi[:, None, :]
        inc = np.einsum("nkd,nkd->nk", theta - self.theta0, np.broadcast_to(ph, theta.shape)) - logpart + self.logpart0
        self.loglam[:, :m] += inc
        self._update(ph, m)
        self.count[:m] += 1
        ll = self.loglam[:, :m]
        if kind == "asr":
            return _lse(ll)
        return ll.max(axis=1)

    def _kernel_step(self, phi, m):
        stat = self.stat
        if self.spec.kind == "glr":
            self.count[:m] += 1
            if self.mode == "bernoulli":
                kernels.bernoulli_glr_step(self.succ, self.count, m, phi.astype(np.int16), self.glr_tab, stat)
            else:
                kernels.glr_branch_step(self.total, self.count, m, np.ascontiguousarray(phi),
                                        self.theta0, self.logpart0, self.fam, stat)
            return stat.copy()
        lse = self.spec.kind == "asr"
        if self.mode == "bernoulli":
            kernels.bernoulli_fsm_step(self.loglam, self.succ, m, phi.astype(np.int8), *self.fsm, lse, stat)
        else:
            eta = np.asarray(self.spec.schedule(self.count[:m] + 1), dtype=float)
            kernels.omd_branch_step(self.loglam, self.mu, self.theta, self.logpart, m,
                                    np.ascontiguousarray(phi), self.theta0, self.logpart0, self.fam, eta,
                                    self.proj, self.radius, self.lo, self.hi, lse, stat)
        self.count[:m] += 1
        return stat.copy()

    def _spawn(self, s):
        self.loglam[:, s] = 0.0
        self.count[s] = 0
        est = self.spec.estimator
        if self.mode == "bernoulli":
            self.succ[:, s] = 0
        elif est == "omd":
            self.mu[:, s] = self.mu0
            self.theta[:, s] = self.theta0
            self.logpart[:, s] = self.logpart0
        elif not est.startswith("fixed"):
            self.total[:, s] = 0.0

    def _theta(self, m):
        est = self.spec.estimator
        if est == "omd" or est.startswith("fixed"):
            return self.theta[:, :m], self.logpart[:, :m]
        cnt = self.count[:m]
        if est == "mom":
            th = mom_theta(np.broadcast_to(cnt, (self.n, m)), self.total[:, :m], 1.0, self.mom_s0)
        else:
            th = shrink_theta(np.broadcast_to(cnt, (self.n, m)), self.total[:, :m], self.theta0,
                              self.shrink_mode, self.shrink_thr)
        return th, self.model.log_partition(th)

    def _update(self, ph, m):
        est = self.spec.estimator
        if est == "omd":
            mu, th, _ = omd_update(self.model, self.spec.feasible_set, self.mu[:, :m],
                                   self.count[:m], ph, self.spec.schedule)
            self.mu[:, :m] = mu
            self.theta[:, :m] = th
            self.logpart[:, :m] = self.model.log_partition(th)
        elif not est.startswith("fixed"):
            self.total[:, :m] += ph

    def _glr(self, phi, m):
        self.total[:, :m] += phi[:, None, :]
        self.count[:m] += 1
        n_k = self.count[:m].astype(float)
        mean = self.total[:, :m] / n_k[:, None]
        th, _ = mle_from_mean(self.model, mean)
        val = n_k * (
            np.sum((th - self.theta0) * mean, axis=-1) - self.model.log_partition(th) + self.logpart0
        )
        return val.max(axis=1)


# ---------------------------------------------------------------------------
# running many paths
# ---------------------------------------------------------------------------

@dataclass
class PathRecords:
    """Running-maximum records of the statistic along each path.

    A path stops once its statistic crosses ``stop_level`` (or at ``cap``).
    For any threshold below ``stop_level`` the stopping time of every path is
    recoverable exactly: it is the time of the first record above the
    threshold, or ``cap`` if there is none.
    """

    path: np.ndarray
    time: np.ndarray
    value: np.ndarray
    n_paths: int
    cap: int
    stop_level: float
    inclusive: bool = False

    def stopping_times(self, b: float):
        if b > self.stop_level:
            raise ValueError(f"threshold {b} above the recorded stop level {self.stop_level}")
        hit = self.value >= b if self.inclusive else self.value > b
        T = np.full(self.n_paths, self.cap, dtype=np.int64)
        np.minimum.at(T, self.path[hit], self.time[hit])
        crossed = np.zeros(self.n_paths, dtype=bool)
        crossed[self.path[hit]] = True
        return T, ~crossed

    def arl(self, b: float):
        """(mean run length, standard error, censored fraction) at threshold b."""
        T, censored = self.stopping_times(b)
        se = T.std(ddof=1) / np.sqrt(len(T)) if len(T) > 1 else 0.0
        return float(T.mean()), float(se), float(censored.mean())

    @classmethod
    def concat(cls, parts):
        offs = np.cumsum([0] + [p.n_paths for p in parts[:-1]])
        p0 = parts[0]
        return cls(
            np.concatenate([p.path + o for p, o in zip(parts, offs)]),
            np.concatenate([p.time for p in parts]),
            np.concatenate([p.value for p in parts]),
            sum(p.n_paths for p in parts), p0.cap, p0.stop_level, p0.inclusive,
        )


def chunk_size(dim: int) -> int:
    return int(np.clip(4096 // max(dim, 1), 16, 128))


def block_size(spec: DetectorSpec, dim: int) -> int:
    """Paths advanced together; keeps per-block branch state cache-sized."""
    w = spec.window or 1024
    return int(max(16, 2**18 // (w * dim)))


def run_paths(spec: DetectorSpec, model, theta0, source, seeds, cap: int, stop_level: float,
              backend: str = "compiled") -> PathRecords:
    """Advance one path per seed until its statistic crosses ``stop_level`` or ``cap`` steps."""
    if cap < 1:
        raise ConfigError("run-length cap must be positive")
    if len(seeds) == 0:
        raise ConfigError("need at least one trial")
    B = block_size(spec, model.dim)
    parts = [
        _run_block(spec, model, theta0, source, seeds[i:i + B], cap, stop_level, backend)
        for i in range(0, len(seeds), B)
    ]
    return PathRecords.concat(parts)


def _run_block(spec, model, theta0, source, seeds, cap, stop_level, backend):
    n = len(seeds)
    inclusive = spec.kind == "sprt"
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in seeds]
    params = [source.start(r) for r in rngs]
    det = BatchDetector(spec, model, theta0, n, backend=backend)
    ids = np.arange(n)
    runmax = np.full(n, -np.inf)
    rec_p, rec_t, rec_v = [], [], []
    C = chunk_size(model.dim)
    buf = None
    for t in range(1, cap + 1):
        j = (t - 1) % C
        if j == 0:
            buf = np.stack([source.draw(rngs[i], params[i], C) for i in ids])
        stat = det.step(buf[:, j])
        new = stat > runmax
        if np.any(new):
            rec_p.append(ids[new])
            rec_t.append(np.full(np.count_nonzero(new), t))
            rec_v.append(stat[new])
            runmax = np.where(new, stat, runmax)
        done = stat >= stop_level if inclusive else stat > stop_level
        if np.any(done):
            keep = ~done
            det.keep(keep)
            ids, runmax, buf = ids[keep], runmax[keep], buf[keep]
            if len(ids) == 0:
                break
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
    return PathRecords(cat(rec_p, np.int64), cat(rec_t, np.int64), cat(rec_v, float),
                       n, cap, float(stop_level), inclusive)


def stopping_times(spec, model, theta0, source, seeds, cap, b):
    """Stopping time per path at threshold ``b`` and the censoring mask."""
    rec = run_paths(spec, model, theta0, source, seeds, cap, b)
    return rec.stopping_times(b)
