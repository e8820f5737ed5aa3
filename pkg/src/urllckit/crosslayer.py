"""Cross-layer resource allocation case studies.

Two optimizers over a multi-user downlink with large-scale gains alpha_k and
quasi-static small-scale fading g ~ Gamma(N_T, 1) (maximum-ratio combining
over N_T antennas; swappable to a deterministic g = N_T for closed-form
checks via ``fading="deterministic"``):

* sum-power minimization: pick per-user bandwidth and the minimum transmit
  power meeting either the URLLC decoding+queueing loss budget or a
  delay-tolerant mean-rate constraint, subject to the total bandwidth cap;
* total-bandwidth minimization at fixed per-user power, subject to the
  statistical-QoS condition that the per-frame effective capacity of the
  finite-blocklength service covers the source's effective bandwidth.

The URLLC power constraint applies the unit-dispersion form of the decoding
error (V ~ 1), matching the constraint the optimization problem is stated
with; the simulator validates allocations against the exact dispersion.

All expectations over the fading gain run through the shared Gauss-Laguerre
machinery; solved allocations are re-verified at doubled quadrature order
before being returned.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import erfc, logsumexp

from .numerics import gamma_quadrature_rule
from .qos import (
    PoissonSource,
    QosTarget,
    effective_bandwidth_poisson,
    poisson_effective_bandwidth,
    qos_exponent,
)

__all__ = [
    "UserProfile",
    "SystemBudget",
    "Allocation",
    "InfeasibleError",
    "BudgetSplit",
    "split_budget",
    "urllc_constraint_gap",
    "delay_tolerant_rate_gap",
    "PowerSolution",
    "min_power_for_user",
    "delay_tolerant_min_power",
    "min_power_batch",
    "delay_tolerant_min_power_batch",
    "min_total_power_allocation",
    "BandwidthSolution",
    "min_bandwidth_for_user",
    "min_bandwidth_batch",
    "relative_qos_error",
    "epsilon_split_experiment",
]

_LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)

URLLC = "urllc"
DELAY_TOLERANT = "delay_tolerant"

POWER_CAP_W = 1e6  # expansion cap: beyond this the policy is channel-inverse-unbounded


class InfeasibleError(RuntimeError):
    """No setting within the caps satisfies the constraint."""


@dataclass(frozen=True)
class UserProfile:
    """One user: channel gain, service class, and its traffic descriptor."""

    alpha: float
    service_class: str
    src: PoissonSource | None = None  # URLLC traffic
    mean_rate_bits_per_s: float | None = None  # delay-tolerant traffic
    fixed_power_w: float | None = None  # for the bandwidth-only problem

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.service_class == URLLC:
            if self.src is None or self.mean_rate_bits_per_s is not None:
                raise ValueError("URLLC users carry exactly a PoissonSource")
        elif self.service_class == DELAY_TOLERANT:
            if self.mean_rate_bits_per_s is None or self.src is not None:
                raise ValueError("delay-tolerant users carry exactly a mean rate")
            if self.mean_rate_bits_per_s < 0:
                raise ValueError("mean rate must be nonnegative")
        else:
            raise ValueError(f"unknown service class {self.service_class!r}")


@dataclass(frozen=True)
class SystemBudget:
    """Shared radio budget: bandwidth cap, array size, noise floor, QoS."""

    total_bandwidth_hz: float
    n_antennas: int
    noise_psd_w_per_hz: float
    frame_s: float
    qos: QosTarget

    def __post_init__(self):
        if self.total_bandwidth_hz <= 0:
            raise ValueError("total_bandwidth_hz must be positive")
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if self.noise_psd_w_per_hz <= 0:
            raise ValueError("noise_psd_w_per_hz must be positive")
        if self.frame_s <= 0:
            raise ValueError("frame_s must be positive")
        if not math.isclose(self.frame_s, self.qos.frame_s, rel_tol=1e-12):
            raise ValueError("budget frame_s disagrees with qos frame_s")


@dataclass(frozen=True)
class Allocation:
    """Solved per-user bandwidths/powers with re-verified constraint gaps."""

    bandwidth_hz: np.ndarray
    power_w: np.ndarray
    constraint_gap: np.ndarray  # <= 0 means satisfied, checked at 2x order
    feasible: bool
    total_power_w: float
    bandwidth_used_hz: float


class BudgetSplit(NamedTuple):
    transmission_delay_s: float
    queue_delay_s: float
    eps_c: float
    eps_q: float


def split_budget(qos: QosTarget) -> BudgetSplit:
    """One frame of transmission delay, the rest for queueing, equal losses.

    A QosTarget with no queueing budget cannot be constructed, so a valid
    input always splits cleanly.
    """
    return BudgetSplit(qos.frame_s, qos.queue_delay_s, qos.eps_c, qos.eps_q)


def _gain_nodes(budget: SystemBudget, order: int, fading: str):
    """Quadrature nodes/weights of the small-scale gain distribution."""
    if fading == "deterministic":
        return np.array([float(budget.n_antennas)]), np.array([1.0])
    if fading == "gamma":
        rule = gamma_quadrature_rule(budget.n_antennas, order)
        return rule.nodes, rule.weights
    raise ValueError(f"unknown fading model {fading!r}")


def _urllc_targets(
    user: UserProfile,
    budget: SystemBudget,
    eps_c: float | None,
    eps_q: float | None,
):
    """Effective bandwidth (bits/s) and decoding-error target for a user.

    The defaults implement the equal split; explicit eps_c/eps_q overrides
    feed the split-optimization experiment.
    """
    qos = budget.qos
    eps_c = qos.eps_c if eps_c is None else eps_c
    eps_q = qos.eps_q if eps_q is None else eps_q
    if eps_c <= 0 or eps_q <= 0:
        raise ValueError("loss shares must be positive")
    src = user.src
    # ln(2/eps_tot) with eps_tot = 2*eps_q equals ln(1/eps_q): the same
    # closed form serves equal and unequal splits.
    eb_pkts = poisson_effective_bandwidth(
        src.rate_pkts_per_s, qos.queue_delay_s, 2.0 * eps_q
    )
    return eb_pkts * src.packet_bits, eps_c


def _urllc_gap_grid(
    user: UserProfile,
    budget: SystemBudget,
    w,
    p,
    order: int = 64,
    fading: str = "gamma",
    eps_c: float | None = None,
    eps_q: float | None = None,
):
    """Vectorized decoding-loss constraint gap; broadcasts w against p."""
    nodes, weights = _gain_nodes(budget, order, fading)
    eb_bits, eps_c_t = _urllc_targets(user, budget, eps_c, eps_q)
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    snr = (
        user.alpha
        * nodes
        * p[..., None]
        / (w[..., None] * budget.noise_psd_w_per_hz * budget.n_antennas)
    )
    arg = np.sqrt(budget.frame_s * w[..., None]) * (
        np.log1p(snr) - eb_bits * _LN2 / w[..., None]
    )
    q = 0.5 * erfc(arg / _SQRT2)
    return q @ weights - eps_c_t


def urllc_constraint_gap(
    user: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    power_w: float,
    order: int = 64,
    fading: str = "gamma",
    verify_quadrature: bool = True,
) -> float:
    """Signed URLLC loss-constraint margin at one (W, P) point.

    E_g{ Q( sqrt(T_f W) [ln(1 + alpha g P / (W N0 N_T)) - u0 E_B ln2 / W] ) }
    minus the decoding-error share of the loss budget; negative means the
    constraint holds. The expectation is verified by doubling the quadrature
    order unless ``verify_quadrature`` is disabled.
    """
    if user.service_class != URLLC:
        raise ValueError("urllc_constraint_gap needs a URLLC user")
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    if power_w < 0:
        raise ValueError("power must be nonnegative")
    gap = float(_urllc_gap_grid(user, budget, bandwidth_hz, power_w, order, fading))
    if verify_quadrature and fading == "gamma":
        fine = float(
            _urllc_gap_grid(user, budget, bandwidth_hz, power_w, 2 * order, fading)
        )
        from .numerics import QuadratureError

        if abs(fine - gap) > 1e-6 * max(abs(fine), abs(gap)) + 1e-12:
            raise QuadratureError(
                f"constraint expectation not converged: {gap:.3e} vs {fine:.3e}"
            )
        gap = fine
    return gap


def _dt_rate_grid(
    user: UserProfile,
    budget: SystemBudget,
    w,
    p,
    order: int = 64,
    fading: str = "gamma",
):
    """Vectorized ergodic rate E_g{W log2(1 + snr)} in bits/s."""
    nodes, weights = _gain_nodes(budget, order, fading)
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    snr = (
        user.alpha
        * nodes
        * p[..., None]
        / (w[..., None] * budget.noise_psd_w_per_hz * budget.n_antennas)
    )
    rate = w[..., None] * np.log1p(snr) / _LN2
    return rate @ weights


def delay_tolerant_rate_gap(
    user: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    power_w: float,
    order: int = 64,
    fading: str = "gamma",
) -> float:
    """Mean-rate constraint margin: arrival rate minus ergodic service rate."""
    if user.service_class != DELAY_TOLERANT:
        raise ValueError("needs a delay-tolerant user")
    rate = float(_dt_rate_grid(user, budget, bandwidth_hz, power_w, order, fading))
    return user.mean_rate_bits_per_s - rate


class PowerSolution(NamedTuple):
    power_w: float
    gap: float


def _bisect_min_power(
    gap_of_p,
    p_seed: float,
    rtol: float,
    power_cap: float,
) -> float:
    """Smallest p with gap_of_p(p) <= 0 by doubling expansion + bisection."""
    hi = min(max(p_seed, 1e-12), power_cap)
    lo = 0.0
    while gap_of_p(hi) > 0.0:
        if hi >= power_cap:
            raise InfeasibleError(
                f"constraint unmet at the {power_cap:g} W expansion cap"
            )
        lo = hi
        hi = min(hi * 2.0, power_cap)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if gap_of_p(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def _deterministic_urllc_power(
    user: UserProfile, budget: SystemBudget, w: float, eps_c: float, eb_bits: float
) -> float:
    """Closed-form power at g = N_T solving the constraint with equality."""
    from .numerics import q_func_inv

    target_ln = eb_bits * _LN2 / w + q_func_inv(eps_c) / math.sqrt(budget.frame_s * w)
    if target_ln > 500.0:  # would overflow; the cap flags it infeasible anyway
        return POWER_CAP_W
    snr = math.expm1(target_ln)
    return snr * w * budget.noise_psd_w_per_hz * budget.n_antennas / (
        user.alpha * budget.n_antennas
    )


def min_power_for_user(
    user: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    rtol: float = 1e-4,
    order: int = 64,
    fading: str = "gamma",
    power_cap: float = POWER_CAP_W,
    eps_c: float | None = None,
    eps_q: float | None = None,
) -> PowerSolution:
    """Minimum URLLC transmit power at a given bandwidth.

    Bracket expansion from the deterministic-channel closed form, then
    bisection to ``rtol`` relative; the returned power is the feasible end
    of the final bracket together with its achieved gap.
    """
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    eb_bits, eps_c_t = _urllc_targets(user, budget, eps_c, eps_q)

    def gap(p: float) -> float:
        return float(
            _urllc_gap_grid(
                user, budget, bandwidth_hz, p, order, fading, eps_c, eps_q
            )
        )

    seed = _deterministic_urllc_power(
        user, budget, bandwidth_hz, min(eps_c_t, 0.499), eb_bits
    )
    p = _bisect_min_power(gap, seed, rtol, power_cap)
    return PowerSolution(p, gap(p))


def delay_tolerant_min_power(
    user: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    rtol: float = 1e-4,
    order: int = 64,
    fading: str = "gamma",
    power_cap: float = POWER_CAP_W,
) -> PowerSolution:
    """Minimum power meeting the ergodic-rate constraint at a bandwidth."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    a_bar = user.mean_rate_bits_per_s
    if a_bar == 0.0:
        return PowerSolution(0.0, 0.0)

    def gap(p: float) -> float:
        return float(
            delay_tolerant_rate_gap(user, budget, bandwidth_hz, p, order, fading)
        )

    # Jensen: the fading rate at the deterministic closed form undershoots,
    # so it is a valid expansion seed (a lower bound on the optimum).
    ln_arg = a_bar * _LN2 / bandwidth_hz
    if ln_arg > 500.0:
        seed = power_cap
    else:
        seed = (
            math.expm1(ln_arg)
            * bandwidth_hz
            * budget.noise_psd_w_per_hz
            * budget.n_antennas
            / (user.alpha * budget.n_antennas)
        )
    p = _bisect_min_power(gap, seed, rtol, power_cap)
    return PowerSolution(p, gap(p))


def _min_power_for_user_any(
    user: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    **kw,
) -> PowerSolution:
    if user.service_class == URLLC:
        return min_power_for_user(user, budget, bandwidth_hz, **kw)
    return delay_tolerant_min_power(user, budget, bandwidth_hz, **kw)


def min_power_batch(
    alphas: Sequence[float],
    template: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    n_iter: int = 50,
    order: int = 64,
    fading: str = "gamma",
    power_cap: float = POWER_CAP_W,
) -> np.ndarray:
    """Vectorized min_power across large-scale gains (fixed bandwidth).

    Used by the learning pipelines to label thousands of channel draws; it
    must agree with the scalar solver, which the tests enforce. Infeasible
    entries come back NaN.
    """
    alphas = np.asarray(alphas, dtype=float)
    nodes, weights = _gain_nodes(budget, order, fading)
    w = bandwidth_hz
    if template.service_class == URLLC:
        eb_bits, eps_c_t = _urllc_targets(template, budget, None, None)
        sqrt_tw = math.sqrt(budget.frame_s * w)
        rate_term = eb_bits * _LN2 / w

        def gap_vec(p: np.ndarray) -> np.ndarray:
            snr = alphas[:, None] * nodes * p[:, None] / (
                w * budget.noise_psd_w_per_hz * budget.n_antennas
            )
            q = 0.5 * erfc((sqrt_tw * (np.log1p(snr) - rate_term)) / _SQRT2)
            return q @ weights - eps_c_t

        from .numerics import q_func_inv

        tgt = min(rate_term + q_func_inv(min(eps_c_t, 0.499)) / sqrt_tw, 500.0)
        seed = (
            math.expm1(tgt)
            * w
            * budget.noise_psd_w_per_hz
            / alphas
        )
    else:
        a_bar = template.mean_rate_bits_per_s

        def gap_vec(p: np.ndarray) -> np.ndarray:
            snr = alphas[:, None] * nodes * p[:, None] / (
                w * budget.noise_psd_w_per_hz * budget.n_antennas
            )
            return a_bar - (w * np.log1p(snr) / _LN2) @ weights

        seed = (
            math.expm1(min(a_bar * _LN2 / w, 500.0))
            * w
            * budget.noise_psd_w_per_hz
            / alphas
        )
    lo = np.zeros_like(alphas)
    hi = np.minimum(np.maximum(seed, 1e-12), power_cap)
    for _ in range(60):
        bad = (gap_vec(hi) > 0.0) & (hi < power_cap)
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, np.minimum(hi * 2.0, power_cap), hi)
    infeasible = gap_vec(hi) > 0.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        ok = gap_vec(mid) <= 0.0
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.where(infeasible, np.nan, hi)


def delay_tolerant_min_power_batch(
    alphas: Sequence[float],
    template: UserProfile,
    budget: SystemBudget,
    bandwidth_hz: float,
    **kw,
) -> np.ndarray:
    return min_power_batch(alphas, template, budget, bandwidth_hz, **kw)


def _power_table(
    user: UserProfile,
    budget: SystemBudget,
    w_grid: np.ndarray,
    order: int,
    fading: str,
    power_cap: float,
    eps_c: float | None = None,
    eps_q: float | None = None,
) -> np.ndarray:
    """Min power at each grid bandwidth (inf where infeasible)."""
    powers = np.full(w_grid.size, np.inf)
    kw = dict(order=order, fading=fading, power_cap=power_cap)
    if user.service_class == URLLC:
        kw.update(eps_c=eps_c, eps_q=eps_q)
    for j, w in enumerate(w_grid):
        try:
            powers[j] = _min_power_for_user_any(user, budget, float(w), **kw).power_w
        except InfeasibleError:
            powers[j] = np.inf
    return powers


def min_total_power_allocation(
    users: Sequence[UserProfile],
    budget: SystemBudget,
    n_grid: int = 200,
    order: int = 64,
    fading: str = "gamma",
    power_cap: float = POWER_CAP_W,
    refine_sweeps: int = 2,
    eps_c: float | None = None,
    eps_q: float | None = None,
) -> Allocation:
    """Joint bandwidth split minimizing the summed minimum transmit powers.

    Per-user minimum powers are tabulated on a shared bandwidth grid of
    ``n_grid`` points; the split is solved exactly over that grid by dynamic
    programming on the quantized budget, then polished by a few sweeps of
    continuous per-user golden-section refinement inside the leftover slack.
    Deterministic given the grid and quadrature order.
    """
    users = list(users)
    if not users:
        raise ValueError("need at least one user")
    k = len(users)
    unit = budget.total_bandwidth_hz / n_grid
    w_grid = unit * np.arange(1, n_grid + 1)
    tables = [
        _power_table(u, budget, w_grid, order, fading, power_cap, eps_c, eps_q)
        for u in users
    ]
    for u, t in zip(users, tables):
        if not np.isfinite(t).any():
            raise InfeasibleError(
                f"user with alpha={u.alpha:g} has no feasible bandwidth alone"
            )

    # DP over the quantized budget: best[b] = min total power within b units.
    big = np.inf
    best = np.zeros(n_grid + 1)
    choice = np.zeros((k, n_grid + 1), dtype=int)
    for i, table in enumerate(tables):
        new = np.full(n_grid + 1, big)
        for b in range(1, n_grid + 1):
            j = np.arange(1, b + 1)
            cand = table[j - 1] + best[b - j]
            jj = int(np.argmin(cand))
            new[b] = cand[jj]
            choice[i, b] = jj + 1
        best = new
    if not np.isfinite(best[n_grid]):
        raise InfeasibleError("no joint split fits the bandwidth budget")
    units_left = n_grid
    units = np.zeros(k, dtype=int)
    for i in range(k - 1, -1, -1):
        units[i] = choice[i, units_left]
        units_left -= units[i]
    w_alloc = units * unit

    solve_kw = dict(order=order, fading=fading, power_cap=power_cap)
    urllc_kw = dict(solve_kw, eps_c=eps_c, eps_q=eps_q)

    def solve_power(i: int, w: float) -> float:
        kw = urllc_kw if users[i].service_class == URLLC else solve_kw
        try:
            return _min_power_for_user_any(users[i], budget, w, **kw).power_w
        except InfeasibleError:
            return np.inf

    powers = np.array([solve_power(i, w_alloc[i]) for i in range(k)])

    # Continuous polish: golden-section per user inside [w - unit, w + slack].
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(refine_sweeps):
        for i in range(k):
            slack = budget.total_bandwidth_hz - w_alloc.sum()
            lo = max(w_alloc[i] - unit, unit * 0.5)
            hi = w_alloc[i] + slack
            if hi - lo < 1e-9 * budget.total_bandwidth_hz:
                continue
            a, b = lo, hi
            c, d = b - gr * (b - a), a + gr * (b - a)
            fc, fd = solve_power(i, c), solve_power(i, d)
            for _ in range(25):
                if fc <= fd:
                    b, d, fd = d, c, fc
                    c = b - gr * (b - a)
                    fc = solve_power(i, c)
                else:
                    a, c, fc = c, d, fd
                    d = a + gr * (b - a)
                    fd = solve_power(i, d)
            w_new = c if fc <= fd else d
            p_new = fc if fc <= fd else fd
            if np.isfinite(p_new) and p_new <= powers[i]:
                w_alloc[i] = w_new
                powers[i] = p_new

    # Re-verify at doubled quadrature order.
    gaps = np.empty(k)
    for i, u in enumerate(users):
        if u.service_class == URLLC:
            gaps[i] = float(
                _urllc_gap_grid(
                    u, budget, w_alloc[i], powers[i], 2 * order, fading, eps_c, eps_q
                )
            )
        else:
            gaps[i] = delay_tolerant_rate_gap(
                u, budget, w_alloc[i], powers[i], 2 * order, fading
            )
    feasible = bool(
        np.all(np.isfinite(powers))
        and np.all(gaps <= 1e-6)
        and w_alloc.sum() <= budget.total_bandwidth_hz * (1 + 1e-12)
    )
    return Allocation(
        bandwidth_hz=w_alloc,
        power_w=powers,
        constraint_gap=gaps,
        feasible=feasible,
        total_power_w=float(powers.sum()),
        bandwidth_used_hz=float(w_alloc.sum()),
    )


# ---------------------------------------------------------------------------
# Bandwidth minimization under the effective-capacity condition
# ---------------------------------------------------------------------------


def _ec_constraint_params(user: UserProfile, budget: SystemBudget):
    """theta (per bit) and the bits/s effective bandwidth for a user."""
    eb_bits = effective_bandwidth_poisson(user.src, budget.qos) * user.src.packet_bits
    theta = qos_exponent(eb_bits, budget.qos).theta
    return theta, eb_bits


def _na_rate_grid(
    user: UserProfile,
    budget: SystemBudget,
    w,
    power_w,
    nodes,
    eps_c: float,
):
    """Finite-blocklength rate per gain node, clamped at zero (bits/s)."""
    w = np.asarray(w, dtype=float)[..., None]
    snr = user.alpha * nodes * power_w / (
        w * budget.noise_psd_w_per_hz * budget.n_antennas
    )
    v = -np.expm1(-2.0 * np.log1p(snr))
    from .numerics import q_func_inv

    penalty = np.sqrt(v / (budget.frame_s * w)) * q_func_inv(eps_c)
    return np.maximum((w / _LN2) * (np.log1p(snr) - penalty), 0.0)


def _ec_gap_grid(
    user: UserProfile,
    budget: SystemBudget,
    w,
    order: int = 64,
    fading: str = "gamma",
):
    """log E_g{e^{-theta T_f s}} + theta T_f E_B  (<= 0 means satisfied).

    The exponent carries the per-frame service block s*T_f: that keeps it
    dimensionless and O(1), and is exactly the per-frame effective-capacity
    condition E_C >= E_B restated in log space.
    """
    nodes, weights = _gain_nodes(budget, order, fading)
    theta, eb_bits = _ec_constraint_params(user, budget)
    s = _na_rate_grid(user, budget, w, user.fixed_power_w, nodes, budget.qos.eps_c)
    z = -theta * budget.frame_s * s
    lse = logsumexp(z, axis=-1, b=weights)
    return lse + theta * budget.frame_s * eb_bits


class BandwidthSolution(NamedTuple):
    bandwidth_hz: float
    constraint_value: float  # log-space gap, <= 0 satisfied


def min_bandwidth_for_user(
    user: UserProfile,
    budget: SystemBudget,
    rtol: float = 1e-8,
    order: int = 64,
    fading: str = "gamma",
    coarse_points: int = 64,
) -> BandwidthSolution:
    """Minimum bandwidth meeting the statistical-QoS constraint at fixed power.

    A coarse scan locates a sign change of the constraint and verifies it is
    monotone up to the crossing before bisecting; a non-monotone scan earns a
    warning and a dense-scan fallback for the smallest feasible bandwidth.
    """
    if user.service_class != URLLC or user.fixed_power_w is None:
        raise ValueError("needs a URLLC user with fixed_power_w set")
    w_cap = budget.total_bandwidth_hz
    w_scan = np.geomspace(w_cap * 1e-4, w_cap, coarse_points)
    h = _ec_gap_grid(user, budget, w_scan, order, fading)
    ok = np.nonzero(h <= 0.0)[0]
    if ok.size == 0:
        raise InfeasibleError("constraint unmet up to the bandwidth cap")
    first = int(ok[0])
    if first == 0:
        lo, hi = w_scan[0] * 1e-3, w_scan[0]
    else:
        # Flat segments are fine (the rate clamp pins h at its ceiling for
        # tiny W); what bisection needs is no re-crossing.
        monotone = bool(np.all(np.diff(h[: first + 1]) <= 1e-12))
        if not monotone or not np.all(h[first:] <= 0.0):
            warnings.warn(
                "constraint not monotone on the coarse bracket; dense scan",
                RuntimeWarning,
                stacklevel=2,
            )
            w_dense = np.geomspace(w_cap * 1e-4, w_cap, 4096)
            h_dense = _ec_gap_grid(user, budget, w_dense, order, fading)
            ok_d = np.nonzero(h_dense <= 0.0)[0]
            j = int(ok_d[0])
            if j == 0:
                lo, hi = w_dense[0] * 1e-3, w_dense[0]
            else:
                lo, hi = w_dense[j - 1], w_dense[j]
        else:
            lo, hi = w_scan[first - 1], w_scan[first]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if float(_ec_gap_grid(user, budget, mid, order, fading)) <= 0.0:
            hi = mid
        else:
            lo = mid
    return BandwidthSolution(hi, float(_ec_gap_grid(user, budget, hi, order, fading)))


def min_bandwidth_batch(
    alphas: Sequence[float],
    template: UserProfile,
    budget: SystemBudget,
    n_iter: int = 60,
    order: int = 64,
    fading: str = "gamma",
) -> np.ndarray:
    """Vectorized min_bandwidth across large-scale gains (NaN = infeasible)."""
    alphas = np.asarray(alphas, dtype=float)
    nodes, weights = _gain_nodes(budget, order, fading)
    theta, eb_bits = _ec_constraint_params(template, budget)
    power = template.fixed_power_w
    eps_c = budget.qos.eps_c
    from .numerics import q_func_inv

    qinv = q_func_inv(eps_c)

    def gap_vec(w: np.ndarray) -> np.ndarray:
        snr = alphas[:, None] * nodes * power / (
            w[:, None] * budget.noise_psd_w_per_hz * budget.n_antennas
        )
        v = -np.expm1(-2.0 * np.log1p(snr))
        s = np.maximum(
            (w[:, None] / _LN2)
            * (np.log1p(snr) - np.sqrt(v / (budget.frame_s * w[:, None])) * qinv),
            0.0,
        )
        z = -theta * budget.frame_s * s
        return logsumexp(z, axis=-1, b=weights) + theta * budget.frame_s * eb_bits

    w_cap = budget.total_bandwidth_hz
    lo = np.full(alphas.shape, w_cap * 1e-7)
    hi = np.full(alphas.shape, w_cap, dtype=float)
    infeasible = gap_vec(hi) > 0.0
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        ok = gap_vec(mid) <= 0.0
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.where(infeasible, np.nan, hi)


def relative_qos_error(
    bandwidth_hat_hz: float,
    user: UserProfile,
    budget: SystemBudget,
    order: int = 64,
    fading: str = "gamma",
) -> float:
    """Relative QoS violation of an approximate bandwidth (0 when feasible).

    max{ E_g{ e^{theta T_f (E_B - s_hat)} } - 1, 0 }: the constraint's
    multiplicative slack, clamped so over-provisioning reads as zero error.
    """
    if bandwidth_hat_hz <= 0:
        raise ValueError("bandwidth must be positive")
    h = float(_ec_gap_grid(user, budget, bandwidth_hat_hz, order, fading))
    return max(math.expm1(h), 0.0)


def relative_qos_error_batch(
    bandwidth_hat_hz: Sequence[float],
    alphas: Sequence[float],
    template: UserProfile,
    budget: SystemBudget,
    order: int = 64,
    fading: str = "gamma",
) -> np.ndarray:
    """Vectorized relative QoS error across (alpha, W_hat) pairs."""
    alphas = np.asarray(alphas, dtype=float)
    w_hat = np.asarray(bandwidth_hat_hz, dtype=float)
    nodes, weights = _gain_nodes(budget, order, fading)
    theta, eb_bits = _ec_constraint_params(template, budget)
    power = template.fixed_power_w
    from .numerics import q_func_inv

    qinv = q_func_inv(budget.qos.eps_c)
    snr = alphas[:, None] * nodes * power / (
        w_hat[:, None] * budget.noise_psd_w_per_hz * budget.n_antennas
    )
    v = -np.expm1(-2.0 * np.log1p(snr))
    s = np.maximum(
        (w_hat[:, None] / _LN2)
        * (np.log1p(snr) - np.sqrt(v / (budget.frame_s * w_hat[:, None])) * qinv),
        0.0,
    )
    z = -theta * budget.frame_s * s
    h = logsumexp(z, axis=-1, b=weights) + theta * budget.frame_s * eb_bits
    return np.maximum(np.expm1(h), 0.0)


def epsilon_split_experiment(
    users: Sequence[UserProfile],
    budget: SystemBudget,
    shares: Sequence[float] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
    n_grid: int = 64,
    order: int = 64,
    fading: str = "gamma",
) -> dict:
    """Total power of the equal loss split versus a grid-optimized split.

    Each share s assigns eps_c = s*eps_tot and eps_q = (1-s)*eps_tot to the
    URLLC users and re-runs the joint allocation. Returns the per-share
    totals plus the relative penalty of the equal split against the best
    share found.
    """
    eps_tot = budget.qos.overall_loss
    totals = {}
    for s in shares:
        alloc = min_total_power_allocation(
            users,
            budget,
            n_grid=n_grid,
            order=order,
            fading=fading,
            eps_c=s * eps_tot,
            eps_q=(1.0 - s) * eps_tot,
        )
        totals[float(s)] = alloc.total_power_w
    equal = min_total_power_allocation(
        users, budget, n_grid=n_grid, order=order, fading=fading
    ).total_power_w
    best_share = min(totals, key=totals.get)
    best = totals[best_share]
    return {
        "totals_by_share": totals,
        "equal_split_total_w": equal,
        "best_share": best_share,
        "best_total_w": best,
        "equal_split_penalty": equal / best - 1.0,
    }
