"""Discrete-event validation engine.

Two simulators back every analytical tail claim in the toolkit:

* ``run_queue_sim`` — single-server FCFS queue with Poisson or deterministic
  arrivals and a constant service rate. Timing is exact: the Lindley
  recursion is solved in closed (vectorized) form, which is equivalent to
  event-driven simulation of the same system.
* ``run_link_sim`` — per-frame quasi-static fading link with a one-frame
  transmission rule: the head-of-line packet is sent once per frame, a
  decode failure is a loss (no HARQ), and packets whose queueing delay
  exceeds the budget are dropped.

``tail_probability`` wraps the Wilson score interval used everywhere a
measured loss rate is compared against a target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fbl import decoding_error_for_blocklength
from .numerics import make_rng
from .qos import PoissonSource

__all__ = [
    "SimConfig",
    "PacketTrace",
    "QueueSimSummary",
    "run_queue_sim",
    "LinkLossSummary",
    "run_link_sim",
    "TailEstimate",
    "tail_probability",
    "wilson_interval",
]

OUTCOME_DELIVERED = 0
OUTCOME_DECODE_LOSS = 1
OUTCOME_DEADLINE_LOSS = 2

_OUTCOME_NAMES = {0: "delivered", 1: "decode_loss", 2: "deadline_loss"}


@dataclass(frozen=True)
class SimConfig:
    """Run length, warmup, seed, and model selectors for a simulation."""

    seed: int = 0
    horizon: int = 100_000  # packets for queue sims, frames for link sims
    warmup_fraction: float = 0.1
    arrival_model: str = "poisson"  # poisson | deterministic

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.warmup_fraction < 0.5:
            raise ValueError("warmup_fraction must be in [0, 0.5)")
        if self.arrival_model not in ("poisson", "deterministic"):
            raise ValueError(f"unknown arrival model {self.arrival_model!r}")


@dataclass
class PacketTrace:
    """Columnar per-packet records (struct-of-arrays for multi-million runs)."""

    arrival_s: np.ndarray
    departure_s: np.ndarray  # departure or drop time
    outcome: np.ndarray  # OUTCOME_* codes

    def __len__(self) -> int:
        return self.arrival_s.size

    def outcome_names(self) -> list[str]:
        return [_OUTCOME_NAMES[int(o)] for o in self.outcome]

    def iter_rows(self):
        for a, d, o in zip(self.arrival_s, self.departure_s, self.outcome):
            yield float(a), float(d), _OUTCOME_NAMES[int(o)]


@dataclass(frozen=True)
class QueueSimSummary:
    n_packets: int
    n_after_warmup: int
    mean_sojourn_s: float
    mean_waiting_s: float
    sojourn_quantiles: dict
    measured_arrival_rate: float
    mean_queue_length: float  # time-average number in system, measured
    utilization: float
    overloaded: bool


def _arrival_times(src: PoissonSource, n: int, cfg: SimConfig) -> np.ndarray:
    if cfg.arrival_model == "deterministic":
        return (np.arange(1, n + 1)) / src.rate_pkts_per_s
    rng = make_rng(cfg.seed)
    return np.cumsum(rng.exponential(1.0 / src.rate_pkts_per_s, size=n))


def run_queue_sim(
    src: PoissonSource,
    service_rate_bits_per_s: float,
    cfg: SimConfig,
    tail_thresholds_s: Sequence[float] = (),
) -> tuple[PacketTrace, QueueSimSummary]:
    """FCFS single-server queue at a constant service rate.

    Returns the full packet trace plus a summary with delay quantiles and a
    measured (not inferred) time-average queue length so Little's law can be
    checked rather than assumed. Overload (offered load >= capacity) only
    warns through the summary flag; the run still completes.
    """
    if service_rate_bits_per_s <= 0:
        raise ValueError("service rate must be positive")
    n = cfg.horizon
    service_s = src.packet_bits / service_rate_bits_per_s
    arrivals = _arrival_times(src, n, cfg)

    # Lindley in closed form: W_i = S_i - min_{j<=i} S_j, S_i = sum(s - tau).
    drift = service_s - np.diff(arrivals, prepend=0.0)
    s_path = np.cumsum(drift)
    s_path -= s_path[0]  # first packet waits zero
    waiting = s_path - np.minimum.accumulate(np.minimum(s_path, 0.0))
    sojourn = waiting + service_s
    departures = arrivals + sojourn

    warm = int(n * cfg.warmup_fraction)
    soj_w = sojourn[warm:]
    wait_w = waiting[warm:]
    arr_w = arrivals[warm:]
    horizon_span = arrivals[-1] - (arrivals[warm - 1] if warm else 0.0)
    measured_rate = soj_w.size / horizon_span

    # Independent queue-length measurement: sample N(t) on a regular grid.
    t0 = arrivals[warm - 1] if warm else 0.0
    grid = np.linspace(t0, arrivals[-1], num=min(200_000, max(1000, n // 10)))
    n_in_system = np.searchsorted(arrivals, grid, side="right") - np.searchsorted(
        np.sort(departures), grid, side="right"
    )
    qs = {
        q: float(np.quantile(soj_w, q)) for q in (0.5, 0.9, 0.99, 0.999)
    }
    for t in tail_thresholds_s:
        qs[f"ccdf@{t:g}"] = float((soj_w > t).mean())

    summary = QueueSimSummary(
        n_packets=n,
        n_after_warmup=int(soj_w.size),
        mean_sojourn_s=float(soj_w.mean()),
        mean_waiting_s=float(wait_w.mean()),
        sojourn_quantiles=qs,
        measured_arrival_rate=float(measured_rate),
        mean_queue_length=float(n_in_system.mean()),
        utilization=float(src.rate_pkts_per_s * service_s),
        overloaded=bool(src.rate_pkts_per_s * service_s >= 1.0),
    )
    trace = PacketTrace(
        arrival_s=arrivals,
        departure_s=departures,
        outcome=np.zeros(n, dtype=np.int8),
    )
    return trace, summary


@dataclass(frozen=True)
class LinkLossSummary:
    n_arrivals: int
    n_delivered: int
    n_decode_loss: int
    n_deadline_loss: int
    eps_c_hat: float  # decode losses / arrivals
    eps_q_hat: float  # deadline losses / arrivals
    eps_tot_hat: float  # all losses / arrivals (disjoint outcomes)
    eps_c_conditional: float  # decode losses / transmissions (other convention)
    n_transmissions: int


def run_link_sim(
    alpha: float,
    power_w: float,
    bandwidth_hz: float,
    noise_psd_w_per_hz: float,
    n_antennas: int,
    src: PoissonSource,
    frame_s: float,
    queue_delay_budget_s: float,
    cfg: SimConfig,
    use_unit_dispersion: bool = False,
) -> tuple[PacketTrace, LinkLossSummary]:
    """Fading-link queue with per-frame transmissions and loss decomposition.

    Each frame draws an independent Gamma(n_antennas, 1) small-scale gain
    (quasi-static within the frame). The head-of-line packet is transmitted
    once; it is lost with the finite-blocklength decoding error probability
    of that frame's SNR. A packet whose wait would exceed the queueing
    budget is dropped at the frame boundary before transmission.

    Outcomes are disjoint per packet, so eps_tot_hat = eps_c_hat + eps_q_hat
    exactly; ``eps_c_conditional`` reports the per-transmission convention.
    ``cfg.horizon`` counts frames.
    """
    if power_w < 0:
        raise ValueError("power must be nonnegative")
    n_frames = cfg.horizon
    rng = make_rng(cfg.seed)
    lam = src.rate_pkts_per_s

    # Pre-draw per-frame channel state and the decode-failure uniforms.
    gains = rng.gamma(shape=n_antennas, scale=1.0, size=n_frames)
    snr = alpha * gains * power_w / (bandwidth_hz * noise_psd_w_per_hz * n_antennas)
    eps_frame = decoding_error_for_blocklength(
        frame_s * bandwidth_hz, snr, src.packet_bits,
        use_unit_dispersion=use_unit_dispersion,
    )
    decode_u = rng.random(n_frames)

    # Poisson arrivals over the whole horizon.
    horizon_s = n_frames * frame_s
    n_arr = rng.poisson(lam * horizon_s)
    arrivals = np.sort(rng.random(n_arr) * horizon_s)

    departure = np.empty(n_arr)
    outcome = np.empty(n_arr, dtype=np.int8)
    n_tx = 0
    next_free_frame = 0
    for i in range(n_arr):
        a = arrivals[i]
        frame = max(int(math.ceil(a / frame_s - 1e-12)), next_free_frame)
        # Latest frame whose start still meets the queueing budget.
        last_ok = int(math.floor((a + queue_delay_budget_s) / frame_s + 1e-12))
        if frame > last_ok or frame >= n_frames:
            drop_t = min(a + queue_delay_budget_s, horizon_s)
            departure[i] = drop_t
            outcome[i] = OUTCOME_DEADLINE_LOSS
            continue
        n_tx += 1
        next_free_frame = frame + 1
        departure[i] = (frame + 1) * frame_s
        if decode_u[frame] < eps_frame[frame]:
            outcome[i] = OUTCOME_DECODE_LOSS
        else:
            outcome[i] = OUTCOME_DELIVERED

    warm = int(n_arr * cfg.warmup_fraction)
    out_w = outcome[warm:]
    n_eff = out_w.size
    n_dec = int((out_w == OUTCOME_DECODE_LOSS).sum())
    n_dead = int((out_w == OUTCOME_DEADLINE_LOSS).sum())
    n_del = int((out_w == OUTCOME_DELIVERED).sum())
    n_tx_eff = n_dec + n_del
    summary = LinkLossSummary(
        n_arrivals=n_eff,
        n_delivered=n_del,
        n_decode_loss=n_dec,
        n_deadline_loss=n_dead,
        eps_c_hat=n_dec / n_eff if n_eff else 0.0,
        eps_q_hat=n_dead / n_eff if n_eff else 0.0,
        eps_tot_hat=(n_dec + n_dead) / n_eff if n_eff else 0.0,
        eps_c_conditional=n_dec / n_tx_eff if n_tx_eff else 0.0,
        n_transmissions=n_tx_eff,
    )
    trace = PacketTrace(arrival_s=arrivals, departure_s=departure, outcome=outcome)
    return trace, summary


def wilson_interval(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= k <= n:
        raise ValueError("k must be in [0, n]")
    from scipy.stats import norm

    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    ci_low: float
    ci_high: float
    n_samples: int
    n_exceed: int
    insufficient_resolution: bool


def tail_probability(
    samples: Sequence[float],
    threshold: float,
    confidence: float = 0.99,
    target_eps: float | None = None,
) -> TailEstimate:
    """Point estimate and Wilson interval of Pr{X > threshold}.

    When a target tail level is supplied, the estimate is flagged as
    under-resolved if fewer than 100/target samples back it (the usual
    rule of thumb for rare-event measurement).
    """
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one sample")
    k = int((x > threshold).sum())
    lo, hi = wilson_interval(k, x.size, confidence)
    flag = bool(target_eps is not None and x.size < 100.0 / target_eps)
    return TailEstimate(k / x.size, lo, hi, int(x.size), k, flag)
