"""Counting-level Monte Carlo of the pump-probe readout sequence.

The spin is a two-state jump process (optical pumping during the probe plus
intrinsic relaxation) and detector clicks form a Poisson process whose rate
depends on the current spin.  Dead time and after-pulsing are applied to the
click stream afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import linalg
from scipy import stats as sps

from . import _kernels, lindblad
from .params import DetectionChain, SystemParams
from .stats import threshold_fidelity

SPINS = {"up": 0, "down": 1}


@dataclass(frozen=True)
class TrajectoryConfig:
    """One repetition of the pulse sequence: pump, free delay, probe.

    Rates are in 1/ns.  ``flux_up``/``flux_down`` are detected click rates
    from the cavity in each spin state and ``background`` the polarizer
    leakage; detector dark counts come from the :class:`DetectionChain`.
    """

    seed: int = 0
    pump_duration: float = 100.0
    delay: float = 0.0
    probe_duration: float = 400.0
    repetition_period: float | None = None
    pump_target: str = "up"
    pump_rate: float = 1.0 / 6.0
    gamma_p_up: float = 0.0
    gamma_p_down: float = 0.0
    t1: float = math.inf
    flux_up: float = 0.0
    flux_down: float = 0.0
    background: float = 0.0
    afterpulse_delay: float = 100.0

    def __post_init__(self):
        for name in ("pump_rate", "gamma_p_up", "gamma_p_down", "flux_up", "flux_down", "background"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite rate >= 0, got {v!r}")
        for name in ("pump_duration", "probe_duration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if not self.t1 > 0:
            raise ValueError("t1 must be > 0")
        if self.pump_target not in SPINS:
            raise ValueError(f"pump_target must be 'up' or 'down', got {self.pump_target!r}")
        if self.repetition_period is not None and self.repetition_period < self.sequence_duration:
            raise ValueError("repetition_period is shorter than the pulse sequence")

    @property
    def probe_start(self) -> float:
        return self.pump_duration + self.delay

    @property
    def sequence_duration(self) -> float:
        return self.pump_duration + self.delay + self.probe_duration

    @property
    def relaxation(self) -> float:
        """Intrinsic flip rate in each direction (half the relaxation rate)."""
        return 0.0 if math.isinf(self.t1) else 0.5 / self.t1

    def replace(self, **changes) -> "TrajectoryConfig":
        return replace(self, **changes)

    def segments(self, d: DetectionChain):
        """Segment table consumed by the kernels."""
        relax = self.relaxation
        tgt = SPINS[self.pump_target]
        pump_flip = [relax, relax]
        pump_flip[1 - tgt] += self.pump_rate
        bg = self.background + d.dark_rate_per_ns
        dur = [self.pump_duration, self.delay, self.probe_duration]
        rflip = [pump_flip, [relax, relax], [self.gamma_p_up + relax, self.gamma_p_down + relax]]
        rclick = [[0.0, 0.0], [0.0, 0.0], [self.flux_up + bg, self.flux_down + bg]]
        reset_target = [tgt, -1, -1]
        reset_fid = [d.init_fidelity, 1.0, 1.0]
        keep = [0, 2] if self.delay == 0 else [0, 1, 2]
        pick = lambda a: np.asarray([a[i] for i in keep])  # noqa: E731
        return pick(dur), pick(rflip), pick(rclick), pick(reset_target), pick(reset_fid)

    @classmethod
    def from_model(
        cls,
        p: SystemParams,
        d: DetectionChain,
        power: float = 50.0,
        t1: float = math.inf,
        h: lindblad.HilbertConfig | None = None,
        **kw,
    ) -> "TrajectoryConfig":
        """Rates from the master equation at the given probe power.

        Detected fluxes are the steady values inside each (closed) spin
        manifold; the pumping rate is the probe-induced flip rate out of |up>.
        """
        drive = lindblad.DriveSpec.from_power(power, p, d.beta_prime)
        gen = lindblad.build_generator(p, drive, h, recycle=True)
        flux = {}
        for spin in ("up", "down"):
            rho = lindblad.steady_state(gen, initial=gen.state(spin))
            flux[spin] = d.eta_total * lindblad.detected_flux(rho, gen)
        gp = lindblad.pumping_rate(p, power, d.beta_prime, h) if p.gamma > 0 else 0.0
        leak = d.extinction_floor * drive.epsilon**2 * d.eta_total
        return cls(
            gamma_p_up=gp,
            t1=t1,
            flux_up=flux["up"],
            flux_down=flux["down"],
            background=leak,
            **kw,
        )


@dataclass(frozen=True)
class CountingRecord:
    clicks: np.ndarray
    flips: np.ndarray
    final_spin: str


@dataclass(frozen=True)
class BatchRecord:
    """Many trajectories in CSR layout (row j spans ``ptr[j]:ptr[j+1]``)."""

    click_ptr: np.ndarray
    click_t: np.ndarray
    flip_ptr: np.ndarray
    flip_t: np.ndarray
    final_spin: np.ndarray
    first_index: int = 0

    @property
    def n_runs(self) -> int:
        return self.click_ptr.shape[0] - 1

    def record(self, j: int) -> CountingRecord:
        c = self.click_t[self.click_ptr[j]: self.click_ptr[j + 1]]
        f = self.flip_t[self.flip_ptr[j]: self.flip_ptr[j + 1]]
        return CountingRecord(c.copy(), f.copy(), "up" if self.final_spin[j] == 0 else "down")

    def counts_in(self, t_start: float, t_stop: float) -> np.ndarray:
        rows = np.repeat(np.arange(self.n_runs), np.diff(self.click_ptr))
        mask = (self.click_t >= t_start) & (self.click_t < t_stop)
        return np.bincount(rows[mask], minlength=self.n_runs)

    def first_flip_after(self, t_start: float) -> np.ndarray:
        """Time of the first flip after ``t_start`` (inf when none)."""
        out = np.full(self.n_runs, np.inf)
        rows = np.repeat(np.arange(self.n_runs), np.diff(self.flip_ptr))
        mask = self.flip_t > t_start
        np.minimum.at(out, rows[mask], self.flip_t[mask])
        return out - t_start


def simulate_batch(
    cfg: TrajectoryConfig,
    d: DetectionChain,
    n_runs: int,
    first_index: int = 0,
    initial_up_prob: float = 0.5,
    backend: str | None = None,
) -> BatchRecord:
    """Trajectories ``first_index .. first_index + n_runs - 1``.

    Each trajectory draws from its own splitmix64 stream keyed by
    (hashed seed, index); the result does not depend on batching.
    """
    if n_runs < 0:
        raise ValueError("n_runs must be >= 0")
    idx = np.arange(first_index, first_index + n_runs, dtype=np.uint64)
    states = _kernels.stream_seeds(cfg.seed, idx)
    states, u = _kernels.uniforms(states)
    spin0 = np.where(u <= initial_up_prob, 0, 1)
    cp, ct, fp, ft, final = _kernels.simulate(states, spin0, *cfg.segments(d), backend=backend)
    if d.dead_time > 0 or d.afterpulse_prob > 0:
        ap_states = _kernels.stream_seeds(cfg.seed ^ int(_kernels.AFTERPULSE_SALT), idx)
        cp, ct = _kernels.detector(
            cp, ct, ap_states, d.dead_time, d.afterpulse_prob, cfg.afterpulse_delay,
            cfg.sequence_duration, backend=backend,
        )
    return BatchRecord(cp, ct, fp, ft, np.asarray(final), first_index)


def simulate_trajectory(cfg: TrajectoryConfig, d: DetectionChain, index: int = 0) -> CountingRecord:
    return simulate_batch(cfg, d, 1, first_index=index).record(0)


def apply_detector_imperfections(
    clicks,
    dead_time: float = 0.0,
    afterpulse_prob: float = 0.0,
    afterpulse_delay: float = 100.0,
    seed: int = 0,
    t_end: float = math.inf,
) -> np.ndarray:
    """Non-paralyzable dead time and after-pulsing for one click stream.

    Every accepted real click spawns an after-pulse ``afterpulse_delay``
    later with probability ``afterpulse_prob`` (after-pulses do not spawn
    further ones); all pulses then pass the dead-time filter.
    """
    c = np.asarray(clicks, dtype=float)
    if c.size and np.any(np.diff(c) < 0):
        raise ValueError("clicks must be ascending")
    if dead_time < 0 or not 0 <= afterpulse_prob <= 1:
        raise ValueError("dead_time must be >= 0 and afterpulse_prob in [0, 1]")
    ptr = np.array([0, c.size], dtype=np.int64)
    states = _kernels.stream_seeds(seed, [0])
    _, out = _kernels.detector(ptr, c, states, dead_time, afterpulse_prob, afterpulse_delay, t_end)
    return out


# --- estimators ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReadoutEstimate:
    p_up: float
    p_down: float
    fidelity: float
    se_up: float
    se_down: float
    se_fidelity: float
    n_runs: int
    seed: int
    window: float
    threshold: int
    mean_up: float
    mean_down: float

    def to_json(self) -> str:
        return json.dumps({k: _jsonable(v) for k, v in asdict(self).items()}, sort_keys=True, indent=2)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float("%.17g" % v)
    return v


def readout_counts(cfg: TrajectoryConfig, d: DetectionChain, n_runs: int, window: float, backend=None):
    """Probe-window click counts after preparing up (runs 0..n-1) and down (n..2n-1)."""
    t0 = cfg.probe_start
    up = simulate_batch(cfg.replace(pump_target="up"), d, n_runs, 0, backend=backend)
    down = simulate_batch(cfg.replace(pump_target="down"), d, n_runs, n_runs, backend=backend)
    return up.counts_in(t0, t0 + window), down.counts_in(t0, t0 + window)


def estimate_readout_probabilities(
    cfg: TrajectoryConfig,
    d: DetectionChain,
    n_runs: int,
    window: float,
    threshold: int = 0,
    backend: str | None = None,
) -> ReadoutEstimate:
    """Frequencies P_up = P(n > k | up), P_down = P(n <= k | down)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if not 0 < window <= cfg.probe_duration:
        raise ValueError("window must lie in (0, probe_duration]")
    cu, cd = readout_counts(cfg, d, n_runs, window, backend)
    return _estimate(cu, cd, n_runs, cfg.seed, window, threshold)


def _estimate(cu, cd, n_runs, seed, window, threshold):
    pu = float(np.mean(cu > threshold))
    pd = float(np.mean(cd <= threshold))
    se_u = math.sqrt(pu * (1 - pu) / n_runs)
    se_d = math.sqrt(pd * (1 - pd) / n_runs)
    return ReadoutEstimate(
        p_up=pu,
        p_down=pd,
        fidelity=0.5 * (pu + pd),
        se_up=se_u,
        se_down=se_d,
        se_fidelity=0.5 * math.hypot(se_u, se_d),
        n_runs=n_runs,
        seed=int(seed),
        window=window,
        threshold=int(threshold),
        mean_up=float(np.mean(cu)),
        mean_down=float(np.mean(cd)),
    )


def constant_rate_config(n_up: float, n_down: float, window: float = 100.0, seed: int = 0) -> TrajectoryConfig:
    """No spin dynamics; mean window counts ``n_up`` and ``n_down``."""
    return TrajectoryConfig(
        seed=seed,
        pump_duration=1.0,
        probe_duration=window,
        pump_rate=0.0,
        flux_up=n_up / window,
        flux_down=n_down / window,
    )


def poisson_gof(counts, mean: float, min_expected: float = 5.0):
    """Chi-square goodness of fit of integer counts against Poisson(mean).

    Bins with small expectation are pooled into the tails. Returns
    ``(statistic, p_value, n_bins)``.
    """
    counts = np.asarray(counts)
    n = counts.size
    kmax = max(int(counts.max()) if n else 0, int(mean + 10 * math.sqrt(mean + 1)))
    ks = np.arange(kmax + 1)
    expected = n * sps.poisson.pmf(ks, mean)
    expected[-1] += n * sps.poisson.sf(kmax, mean)
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1).astype(float)
    # pool from both ends until every bin is large enough
    edges = []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            edges.append([acc_o, acc_e])
            acc_o = acc_e = 0.0
    if edges:
        edges[-1][0] += acc_o
        edges[-1][1] += acc_e
    obs = np.array([e[0] for e in edges])
    exp = np.array([e[1] for e in edges])
    if obs.size < 2:
        return 0.0, 1.0, int(obs.size)
    stat, pval = sps.chisquare(obs, exp * obs.sum() / exp.sum())
    return float(stat), float(pval), int(obs.size)


def count_distribution(
    cfg: TrajectoryConfig,
    d: DetectionChain,
    window: float,
    initial_spin: str,
    n_cap: int | None = None,
) -> np.ndarray:
    """Exact distribution of probe-window counts for a spin starting in
    ``initial_spin`` (after any preparation error): forward equations of the
    joint (spin, count) chain, solved with a matrix exponential.

    Independent of the sampler; used as its oracle when the spin flips.
    """
    bg = cfg.background + d.dark_rate_per_ns
    lam = np.array([cfg.flux_up + bg, cfg.flux_down + bg])
    relax = cfg.relaxation
    flip = np.array([cfg.gamma_p_up + relax, cfg.gamma_p_down + relax])
    if n_cap is None:
        mean = lam.max() * window
        n_cap = int(mean + 12 * math.sqrt(mean + 1) + 10)
    m = n_cap + 1
    Q = np.zeros((2 * m, 2 * m))
    for s in (0, 1):
        for n in range(m):
            i = s * m + n
            Q[i, i] -= flip[s]
            Q[(1 - s) * m + n, i] += flip[s]
            if n < n_cap:
                Q[i, i] -= lam[s]
                Q[i + 1, i] += lam[s]
    p0 = np.zeros(2 * m)
    p0[SPINS[initial_spin] * m] = 1.0
    p = linalg.expm(Q * window) @ p0
    return p[:m] + p[m:]


def exact_readout(cfg: TrajectoryConfig, d: DetectionChain, window: float, threshold: int):
    """(P_up, P_down, F) from :func:`count_distribution` with preparation errors."""
    f = d.init_fidelity
    up = f * count_distribution(cfg, d, window, "up") + (1 - f) * count_distribution(cfg, d, window, "down")
    dn = f * count_distribution(cfg, d, window, "down") + (1 - f) * count_distribution(cfg, d, window, "up")
    pu = float(up[threshold + 1:].sum())
    pd = float(dn[: threshold + 1].sum())
    return pu, pd, 0.5 * (pu + pd)


def poisson_prediction(est: ReadoutEstimate):
    """Threshold fidelity implied by the measured mean counts if they were Poisson."""
    return threshold_fidelity(max(est.mean_up, est.mean_down), min(est.mean_up, est.mean_down))


# --- T1 pump-probe ------------------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryCurve:
    delays: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray
    n_runs: int
    window: float


def simulate_t1_experiment(
    cfg: TrajectoryConfig,
    d: DetectionChain,
    delays,
    n_runs: int,
    window: float = 20.0,
    backend: str | None = None,
) -> RecoveryCurve:
    """Mean early-probe counts after pumping into |down> and waiting ``delay``.

    Trajectory indices are disjoint across delays so every point is an
    independent sample.
    """
    delays = np.asarray(delays, dtype=float)
    if np.any(np.diff(delays) < 0) or np.any(delays < 0):
        raise ValueError("delays must be ascending and >= 0")
    sig = np.empty(delays.size)
    se = np.empty(delays.size)
    for i, dt in enumerate(delays):
        c = cfg.replace(pump_target="down", delay=float(dt))
        rec = simulate_batch(c, d, n_runs, first_index=i * n_runs, backend=backend)
        counts = rec.counts_in(c.probe_start, c.probe_start + window)
        sig[i] = counts.mean()
        se[i] = counts.std(ddof=1) / math.sqrt(n_runs) if n_runs > 1 else math.nan
    return RecoveryCurve(delays, sig, se, n_runs, window)


def write_clicks_csv(path, batch: BatchRecord) -> None:
    rows = np.repeat(np.arange(batch.n_runs) + batch.first_index, np.diff(batch.click_ptr))
    with open(path, "w") as fh:
        fh.write("run_id,click_time_ns\n")
        for r, t in zip(rows, batch.click_t):
            fh.write(f"{int(r)},{t:.17g}\n")
