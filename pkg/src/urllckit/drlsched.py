"""Downlink URLLC scheduler environment and knowledge-assisted actor-critic.

A slotted multi-user downlink: Bernoulli per-slot packet arrivals queue up
per user, the scheduler picks which head-of-line packets to transmit and how
many resource blocks each gets, and decoding succeeds with one minus the
finite-blocklength error probability of the granted blocklength at that
slot's fading SNR. Packets whose head-of-line delay passes the upper window
edge are dropped and counted as losses; to meet the jitter window a packet
should be sent while its delay sits inside [d_min, d_max].

The agent is deterministic-policy actor-critic with the knowledge hooks the
loss-rate study turns on or off: required-resource-block state encoding,
model-based rewards (optionally -ln(1-r) transformed), potential-based
shaping, one critic head per user, and prioritized replay with
inverse-probability corrections. Everything is seeded and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import neuralcore as nc
from .fbl import decoding_error_for_blocklength
from .numerics import make_rng

__all__ = [
    "PotentialSpec",
    "potential_triangular",
    "shape_reward",
    "reward_indicator",
    "reward_model_based",
    "required_rbs",
    "RbCapError",
    "SchedEnvConfig",
    "SchedEnvState",
    "SchedAction",
    "SchedTransition",
    "env_reset",
    "env_step",
    "observe",
    "ReplayBuffer",
    "sample_prioritized",
    "cmdp_dual_update",
    "lagrangian_reward",
    "value_iteration",
    "AgentConfig",
    "DdpgNets",
    "make_agent",
    "schedule_from_scores",
    "ddpg_update",
    "train_scheduler",
    "evaluate_scheduler",
    "SchedulerRunResult",
]


class RbCapError(ValueError):
    """The required resource blocks exceed the per-slot ceiling."""


# ---------------------------------------------------------------------------
# Rewards, shaping, and the knowledge primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Triangular potential over the head-of-line delay.

    Rises linearly from zero at d=0 to ``psi_max`` at ``d_min``, falls back
    to zero at ``d_end`` (default: d_max), and is zero beyond.
    """

    d_min: int
    d_max: int
    psi_max: float = 1.0
    d_end: int | None = None

    def __post_init__(self):
        d_end = self.d_max if self.d_end is None else self.d_end
        if not 0 < self.d_min < self.d_max <= d_end:
            raise ValueError("need 0 < d_min < d_max <= d_end")
        if self.psi_max <= 0:
            raise ValueError("psi_max must be positive")
        object.__setattr__(self, "d_end", d_end)


def potential_triangular(d, spec: PotentialSpec):
    """Evaluate the triangular potential at delay d (scalar or array)."""
    d = np.asarray(d, dtype=float)
    rise = spec.psi_max * d / spec.d_min
    fall = spec.psi_max * (spec.d_end - d) / (spec.d_end - spec.d_min)
    out = np.where(d <= spec.d_min, rise, np.maximum(fall, 0.0))
    out = np.where(d < 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def shape_reward(r, psi_s, psi_s_next, gamma_d: float):
    """Potential-based shaping: r - psi(s) + gamma * psi(s')."""
    if not 0.0 <= gamma_d < 1.0:
        raise ValueError("gamma_d must be in [0, 1)")
    return r - psi_s + gamma_d * psi_s_next


def reward_indicator(d_k: int, scheduled: bool, decode_ok: bool, window) -> float:
    """1 iff scheduled, decoded, and the delay sits inside the window."""
    d_min, d_max = window
    return float(scheduled and decode_ok and d_min <= d_k <= d_max)


def reward_model_based(
    d_k: int,
    scheduled: bool,
    eps_c: float,
    window,
    log_transform: bool = False,
) -> float:
    """In-window expected-success reward (1 - eps_c), optionally -ln(1-r).

    The transform maps a reward of 1 - eps to -ln(eps), stretching the
    dynamic range near perfect decoding; eps is floored at 1e-12 so an
    exactly-zero error probability stays finite.
    """
    if not 0.0 <= eps_c < 1.0:
        raise ValueError("eps_c must be in [0, 1)")
    d_min, d_max = window
    r = (1.0 - eps_c) if (scheduled and d_min <= d_k <= d_max) else 0.0
    if not log_transform:
        return r
    return -math.log(max(1.0 - r, 1e-12))


def required_rbs(
    snr_linear: float,
    packet_bits: float,
    target_eps_c: float,
    rb_symbols: int,
    rb_cap: int,
    use_unit_dispersion: bool = False,
) -> int:
    """Fewest resource blocks whose blocklength meets a decoding target.

    Starts the integer search at the Shannon lower bound
    ceil(b / (rb_symbols * log2(1+snr))) and walks upward; raises RbCapError
    past ``rb_cap`` (the slot budget ceiling).
    """
    if not 0.0 < target_eps_c < 0.5:
        raise ValueError("target_eps_c must be in (0, 0.5)")
    if snr_linear <= 0:
        raise RbCapError("zero SNR cannot carry a packet")
    n = max(1, math.ceil(packet_bits / (rb_symbols * math.log2(1.0 + snr_linear))))
    while n <= rb_cap:
        eps = decoding_error_for_blocklength(
            n * rb_symbols, snr_linear, packet_bits,
            use_unit_dispersion=use_unit_dispersion,
        )
        if eps <= target_eps_c:
            return n
        n += 1
    raise RbCapError(
        f"{packet_bits:g} bits at snr {snr_linear:g} need more than "
        f"{rb_cap} resource blocks for eps_c <= {target_eps_c:g}"
    )


def cmdp_dual_update(
    lam: float, measured_cost: float, cost_budget: float, step: float
) -> float:
    """Projected dual ascent for a constrained-MDP multiplier."""
    if lam < 0 or step <= 0:
        raise ValueError("need lam >= 0 and step > 0")
    return max(0.0, lam + step * (measured_cost - cost_budget))


def lagrangian_reward(r: float, costs, lambdas) -> float:
    """Reward minus the multiplier-weighted costs the agent trains on."""
    return float(r - np.dot(np.asarray(lambdas), np.asarray(costs)))


def value_iteration(
    transition: np.ndarray,
    reward: np.ndarray,
    gamma_d: float,
    tol: float = 1e-13,
    max_iter: int = 100_000,
):
    """Tabular value iteration; returns (Q, greedy policy by lowest index).

    ``transition[s, a, s']`` are probabilities, ``reward[s, a, s']`` the
    rewards collected on that transition.
    """
    n_s, n_a = transition.shape[:2]
    v = np.zeros(n_s)
    for _ in range(max_iter):
        q = np.einsum("ijk,ijk->ij", transition, reward) + gamma_d * transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = np.einsum("ijk,ijk->ij", transition, reward) + gamma_d * transition @ v
    return q, q.argmax(axis=1)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchedEnvConfig:
    """Traffic, channel, window, and budget parameters of the downlink."""

    n_users: int = 4
    rb_budget: int = 12
    rb_symbols: int = 84
    packet_bits: float = 256.0
    arrival_prob: float = 0.5
    mean_snr: tuple = (10.0, 10.0, 10.0, 10.0)
    d_min: int = 3
    d_max: int = 8
    target_eps_c: float = 1e-3
    cqi_levels: int = 16
    cqi_max_db: float = 25.0
    decode_error_override: float | None = None  # None = finite-blocklength physics

    def __post_init__(self):
        if len(self.mean_snr) != self.n_users:
            raise ValueError("mean_snr must list one value per user")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must be a probability")
        if self.rb_budget < 1 or self.rb_symbols < 1:
            raise ValueError("rb_budget and rb_symbols must be >= 1")

    def perturbed(self, snr_scale: float = 0.8, arrival_scale: float = 1.2):
        """A mismatched twin of this environment for fine-tuning studies."""
        return replace(
            self,
            mean_snr=tuple(s * snr_scale for s in self.mean_snr),
            arrival_prob=min(1.0, self.arrival_prob * arrival_scale),
        )


@dataclass
class SchedEnvState:
    """Full simulator state: per-user packet ages plus the slot's fades."""

    queues: list  # per user: list of packet ages (oldest first)
    snr: np.ndarray  # per-user instantaneous SNR this slot
    slot: int = 0

    def hol_delay(self) -> np.ndarray:
        return np.array([q[0] if q else 0 for q in self.queues], dtype=float)

    def queue_len(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=float)


@dataclass(frozen=True)
class SchedAction:
    """Schedule indicators and per-user resource-block grants."""

    scheduled: np.ndarray  # bool per user
    rb_granted: np.ndarray  # int per user (0 when not scheduled)


@dataclass
class SchedTransition:
    state: np.ndarray
    action: np.ndarray
    rewards: np.ndarray
    next_state: np.ndarray
    weight: float
    done: bool = False


def _draw_snr(cfg: SchedEnvConfig, rng) -> np.ndarray:
    return np.asarray(cfg.mean_snr) * rng.exponential(1.0, size=cfg.n_users)


def env_reset(cfg: SchedEnvConfig, rng) -> SchedEnvState:
    return SchedEnvState(
        queues=[[] for _ in range(cfg.n_users)], snr=_draw_snr(cfg, rng), slot=0
    )


def _decode_eps(cfg: SchedEnvConfig, snr: float, n_rbs: int) -> float:
    if cfg.decode_error_override is not None:
        return cfg.decode_error_override
    return float(
        decoding_error_for_blocklength(
            n_rbs * cfg.rb_symbols, snr, cfg.packet_bits
        )
    )


def env_step(
    cfg: SchedEnvConfig,
    state: SchedEnvState,
    action: SchedAction,
    rng,
    reward_mode: str = "indicator",
):
    """Advance one slot: transmit, collect rewards, age, expire, arrive.

    Returns (next_state, per-user rewards, info). An action over the
    resource-block budget is rejected before any state mutation. Rewards are
    evaluated at the decision-time head-of-line delays; a decode failure
    leaves the packet in place to retry until the window expires, and
    expiries are the packet losses reported in ``info``.
    """
    granted = np.asarray(action.rb_granted, dtype=int)
    scheduled = np.asarray(action.scheduled, dtype=bool)
    if granted.sum() > cfg.rb_budget:
        raise ValueError(
            f"action grants {granted.sum()} RBs over the {cfg.rb_budget} budget"
        )
    if np.any(granted[scheduled] < 1) or np.any(granted[~scheduled] != 0):
        raise ValueError("scheduled users need >= 1 RB, unscheduled exactly 0")
    window = (cfg.d_min, cfg.d_max)
    queues = [list(q) for q in state.queues]
    rewards = np.zeros(cfg.n_users)
    eps_used = np.zeros(cfg.n_users)
    delivered = 0
    for k in range(cfg.n_users):
        if not scheduled[k] or not queues[k]:
            continue
        d_k = queues[k][0]
        eps = _decode_eps(cfg, float(state.snr[k]), int(granted[k]))
        eps_used[k] = eps
        # A deep fade can hit eps = 1 exactly; keep the reward domain open.
        eps = min(eps, 1.0 - 1e-12)
        ok = bool(rng.random() >= eps)
        if reward_mode == "indicator":
            rewards[k] = reward_indicator(d_k, True, ok, window)
        elif reward_mode == "model":
            rewards[k] = reward_model_based(d_k, True, eps, window)
        elif reward_mode == "model_log":
            rewards[k] = reward_model_based(d_k, True, eps, window, log_transform=True)
        else:
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        if ok:
            queues[k].pop(0)
            delivered += 1

    expired = 0
    for k in range(cfg.n_users):
        queues[k] = [a + 1 for a in queues[k]]
        kept = [a for a in queues[k] if a <= cfg.d_max]
        expired += len(queues[k]) - len(kept)
        queues[k] = kept

    arrivals = rng.random(cfg.n_users) < cfg.arrival_prob
    for k in range(cfg.n_users):
        if arrivals[k]:
            queues[k].append(0)

    next_state = SchedEnvState(
        queues=queues, snr=_draw_snr(cfg, rng), slot=state.slot + 1
    )
    info = {
        "delivered": delivered,
        "expired": expired,
        "arrivals": int(arrivals.sum()),
        "eps_used": eps_used,
    }
    return next_state, rewards, info


def _cqi(cfg: SchedEnvConfig, snr: np.ndarray) -> np.ndarray:
    """Quantize SNR in dB to cqi_levels uniform bins over [0, cqi_max_db]."""
    snr_db = 10.0 * np.log10(np.maximum(snr, 1e-12))
    level = np.floor(snr_db / cfg.cqi_max_db * cfg.cqi_levels)
    return np.clip(level, 0, cfg.cqi_levels - 1)


def _required_rbs_capped(cfg: SchedEnvConfig, snr: float) -> int:
    try:
        return required_rbs(
            snr, cfg.packet_bits, cfg.target_eps_c, cfg.rb_symbols, cfg.rb_budget
        )
    except RbCapError:
        return cfg.rb_budget  # deep fade: flag the slot as maximally expensive


def observe(cfg: SchedEnvConfig, state: SchedEnvState, state_mode: str) -> np.ndarray:
    """Per-user observation: HoL delay, channel feature, queue length.

    ``state_mode="required_rbs"`` encodes the channel as the resource blocks
    needed for the target decoding error (the model-based encoding);
    ``state_mode="raw_cqi"`` uses the quantized CQI level instead.
    """
    d = state.hol_delay() / cfg.d_max
    q = np.minimum(state.queue_len(), 10.0) / 10.0
    if state_mode == "required_rbs":
        chan = np.array(
            [_required_rbs_capped(cfg, float(s)) for s in state.snr], dtype=float
        ) / cfg.rb_budget
    elif state_mode == "raw_cqi":
        chan = _cqi(cfg, state.snr) / (cfg.cqi_levels - 1)
    else:
        raise ValueError(f"unknown state mode {state_mode!r}")
    return np.concatenate([d, chan, q])


# ---------------------------------------------------------------------------
# Replay with prioritized sampling
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring buffer with per-transition priority weights."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, n_rewards: int,
                 eps_w: float = 1e-3):
        if capacity < 1 or eps_w <= 0:
            raise ValueError("capacity >= 1 and eps_w > 0 required")
        self.capacity = capacity
        self.eps_w = eps_w
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros((capacity, n_rewards))
        self.next_states = np.zeros((capacity, obs_dim))
        self.weights = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, t: SchedTransition):
        i = self._head
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.rewards
        self.next_states[i] = t.next_state
        self.weights[i] = max(t.weight, 0.0)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def update_weights(self, indices: np.ndarray, weights: np.ndarray):
        self.weights[indices] = np.maximum(weights, 0.0)


def sample_prioritized(buffer: ReplayBuffer, batch: int, rng):
    """Sample indices with probability proportional to weight + eps_w.

    Returns (indices, corrections): corrections are the inverse-probability
    factors 1/(N p_i) normalized so the largest over the buffer equals one.
    """
    if buffer.size == 0:
        raise ValueError("cannot sample from an empty buffer")
    w = buffer.weights[: buffer.size] + buffer.eps_w
    p = w / w.sum()
    idx = rng.choice(buffer.size, size=batch, p=p)
    corrections = p.min() / p[idx]
    return idx, corrections


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentConfig:
    """Which knowledge hooks the agent uses, plus training hyperparameters."""

    state_mode: str = "required_rbs"  # or "raw_cqi"
    reward_mode: str = "model_log"  # indicator | model | model_log
    use_shaping: bool = True
    multi_head: bool = True
    prioritized: bool = True
    hidden: tuple = (64, 64)
    gamma_d: float = 0.95
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    finetune_lr: float = 1e-4
    tau: float = 0.005
    batch_size: int = 64
    replay_capacity: int = 100_000
    warmup: int = 1000
    update_every: int = 1
    noise_std: float = 0.3
    explore_cutoff: float = 0.8  # fraction of the run after which noise stops
    eps_w: float = 1e-3
    potential: PotentialSpec | None = None

    @classmethod
    def knowledge_assisted(cls, env: SchedEnvConfig, **kw) -> "AgentConfig":
        pot = PotentialSpec(d_min=env.d_min, d_max=env.d_max)
        return cls(potential=pot, **kw)

    @classmethod
    def plain_ddpg(cls, **kw) -> "AgentConfig":
        return cls(
            state_mode="raw_cqi",
            reward_mode="indicator",
            use_shaping=False,
            multi_head=False,
            prioritized=False,
            potential=None,
            **kw,
        )


@dataclass
class DdpgNets:
    actor: nc.FnnModel
    critic: nc.FnnModel
    actor_target: nc.FnnModel
    critic_target: nc.FnnModel
    actor_state: nc.OptimizerState
    critic_state: nc.OptimizerState


def make_agent(env: SchedEnvConfig, agent: AgentConfig, seed: int) -> DdpgNets:
    obs_dim = 3 * env.n_users
    act_dim = env.n_users
    n_heads = env.n_users if agent.multi_head else 1
    actor = nc.fnn_init(
        [obs_dim, *agent.hidden, act_dim], ["relu"] * len(agent.hidden) + ["tanh"],
        seed,
    )
    critic = nc.fnn_init(
        [obs_dim + act_dim, *agent.hidden, n_heads],
        ["relu"] * len(agent.hidden) + ["identity"],
        seed + 1,
    )
    return DdpgNets(
        actor=actor,
        critic=critic,
        actor_target=nc.clone_model(actor),
        critic_target=nc.clone_model(critic),
        actor_state=nc.OptimizerState.for_model(actor),
        critic_state=nc.OptimizerState.for_model(critic),
    )


def schedule_from_scores(
    cfg: SchedEnvConfig,
    state: SchedEnvState,
    scores: np.ndarray,
    state_mode: str,
) -> SchedAction:
    """Greedy top-score packing of per-user scores into a feasible schedule.

    Users are taken in descending score order; non-positive scores opt out
    (so the agent can deliberately hold a packet below the window). Each
    scheduled user receives the resource blocks required for the target
    decoding error at its current SNR, as far as the budget allows. The
    raw-CQI agent has no required-RB knowledge, so its score magnitude also
    chooses the grant size.
    """
    k = cfg.n_users
    scheduled = np.zeros(k, dtype=bool)
    granted = np.zeros(k, dtype=int)
    remaining = cfg.rb_budget
    for u in sorted(range(k), key=lambda i: -scores[i]):
        if scores[u] <= 0.0 or not state.queues[u]:
            continue
        if state_mode == "required_rbs":
            need = _required_rbs_capped(cfg, float(state.snr[u]))
        else:
            need = max(1, int(round((scores[u]) * cfg.rb_budget)))
        if need <= remaining:
            scheduled[u] = True
            granted[u] = need
            remaining -= need
    return SchedAction(scheduled=scheduled, rb_granted=granted)


def _soft_update(target: nc.FnnModel, online: nc.FnnModel, tau: float):
    for tw, w in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * w
    for tb, b in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * b


def ddpg_update(
    nets: DdpgNets,
    batch_states: np.ndarray,
    batch_actions: np.ndarray,
    batch_rewards: np.ndarray,
    batch_next_states: np.ndarray,
    gamma_d: float,
    agent: AgentConfig,
    corrections: np.ndarray | None = None,
    lr_override: float | None = None,
) -> np.ndarray:
    """One critic regression + actor ascent + target soft update.

    Every critic head regresses toward r_k + gamma * Q_k'(s', actor'(s'));
    the actor ascends the summed head values through the critic's action
    gradient. Returns the per-transition squared TD errors (summed over
    heads) for re-prioritization.
    """
    n = batch_states.shape[0]
    corr = np.ones(n) if corrections is None else corrections
    a_lr = lr_override if lr_override is not None else agent.actor_lr
    c_lr = lr_override if lr_override is not None else agent.critic_lr

    next_actions = nc.forward(nets.actor_target, batch_next_states)
    q_next = nc.forward(
        nets.critic_target, np.concatenate([batch_next_states, next_actions], axis=1)
    )
    y = batch_rewards + gamma_d * q_next

    sa = np.concatenate([batch_states, batch_actions], axis=1)
    q, cache = nc.forward_cached(nets.critic, sa)
    td = y - q
    critic_cfg = nc.TrainConfig(learning_rate=c_lr, optimizer="adam")
    upstream = -2.0 * td * corr[:, None] / n
    nc.sgd_step(
        nets.critic, nc.backward(nets.critic, cache, upstream), critic_cfg,
        nets.critic_state,
    )

    # Actor ascent through dQ/da of the refreshed critic.
    actions, actor_cache = nc.forward_cached(nets.actor, batch_states)
    sa_pi = np.concatenate([batch_states, actions], axis=1)
    _, critic_cache = nc.forward_cached(nets.critic, sa_pi)
    ones = np.ones((n, nets.critic.weights[-1].shape[0]))
    dq_dinput = nc.backward(nets.critic, critic_cache, ones).input
    dq_da = dq_dinput[:, batch_states.shape[1]:]
    actor_cfg = nc.TrainConfig(learning_rate=a_lr, optimizer="adam")
    nc.sgd_step(
        nets.actor,
        nc.backward(nets.actor, actor_cache, -dq_da / n),
        actor_cfg,
        nets.actor_state,
    )

    _soft_update(nets.actor_target, nets.actor, agent.tau)
    _soft_update(nets.critic_target, nets.critic, agent.tau)
    return (td * td).sum(axis=1)


@dataclass
class SchedulerRunResult:
    loss_rate_trace: list  # (slot, loss_rate, mean_reward) per eval window
    final_loss_rate: float
    n_arrivals: int
    n_expired: int
    nets: DdpgNets
    agent: AgentConfig
    env: SchedEnvConfig


def _agent_rewards(
    agent: AgentConfig,
    cfg: SchedEnvConfig,
    rewards: np.ndarray,
    d_before: np.ndarray,
    d_after: np.ndarray,
) -> np.ndarray:
    r = rewards
    if agent.use_shaping and agent.potential is not None:
        psi_s = potential_triangular(d_before, agent.potential)
        psi_n = potential_triangular(d_after, agent.potential)
        r = shape_reward(r, psi_s, psi_n, agent.gamma_d)
    if not agent.multi_head:
        r = np.array([r.sum()])
    return r


def train_scheduler(
    env: SchedEnvConfig,
    agent: AgentConfig,
    n_slots: int,
    seed: int,
    eval_window: int = 2000,
    eval_slots: int = 20_000,
    nets: DdpgNets | None = None,
) -> SchedulerRunResult:
    """Train one agent for ``n_slots`` and evaluate it with exploration off.

    Exploration noise is disabled after ``explore_cutoff`` of the run and
    the learning rate drops to ``finetune_lr``, mirroring the two-phase
    protocol of the loss-rate study. Passing pre-trained ``nets`` fine-tunes
    them (the digital-twin-then-real-network path).
    """
    rng = make_rng(seed)
    if nets is None:
        nets = make_agent(env, agent, seed)
    buffer = ReplayBuffer(
        agent.replay_capacity, 3 * env.n_users, env.n_users,
        env.n_users if agent.multi_head else 1, eps_w=agent.eps_w,
    )
    state = env_reset(env, rng)
    obs = observe(env, state, agent.state_mode)
    cutoff = int(agent.explore_cutoff * n_slots)
    trace = []
    win_arr = win_exp = 0
    win_rew = 0.0
    for slot in range(n_slots):
        exploring = slot < cutoff
        scores = nc.forward(nets.actor, obs)
        if exploring:
            scores = scores + rng.normal(0.0, agent.noise_std, size=scores.shape)
        action = schedule_from_scores(env, state, scores, agent.state_mode)
        d_before = state.hol_delay()
        next_state, rewards, info = env_step(
            env, state, action, rng, reward_mode=agent.reward_mode
        )
        next_obs = observe(env, next_state, agent.state_mode)
        stored = _agent_rewards(agent, env, rewards, d_before, next_state.hol_delay())
        buffer.add(
            SchedTransition(
                state=obs, action=scores, rewards=stored, next_state=next_obs,
                weight=1.0, done=False,
            )
        )
        win_arr += info["arrivals"]
        win_exp += info["expired"]
        win_rew += float(rewards.sum())
        if buffer.size >= agent.warmup and slot % agent.update_every == 0:
            if agent.prioritized:
                idx, corr = sample_prioritized(buffer, agent.batch_size, rng)
            else:
                idx = rng.integers(0, buffer.size, size=agent.batch_size)
                corr = None
            td = ddpg_update(
                nets,
                buffer.states[idx],
                buffer.actions[idx],
                buffer.rewards[idx],
                buffer.next_states[idx],
                agent.gamma_d,
                agent,
                corrections=corr,
                lr_override=None if exploring else agent.finetune_lr,
            )
            if agent.prioritized:
                buffer.update_weights(idx, td)
        state, obs = next_state, next_obs
        if (slot + 1) % eval_window == 0:
            trace.append(
                (
                    slot + 1,
                    win_exp / max(win_arr, 1),
                    win_rew / eval_window,
                )
            )
            win_arr = win_exp = 0
            win_rew = 0.0

    final_loss, n_arr, n_exp = evaluate_scheduler(
        env, agent, nets, eval_slots, seed + 777
    )
    return SchedulerRunResult(
        loss_rate_trace=trace,
        final_loss_rate=final_loss,
        n_arrivals=n_arr,
        n_expired=n_exp,
        nets=nets,
        agent=agent,
        env=env,
    )


def evaluate_scheduler(
    env: SchedEnvConfig,
    agent: AgentConfig,
    nets: DdpgNets,
    n_slots: int,
    seed: int,
) -> tuple[float, int, int]:
    """Greedy rollout (no noise, no updates); returns loss rate and counts."""
    rng = make_rng(seed)
    state = env_reset(env, rng)
    n_arr = n_exp = 0
    for _ in range(n_slots):
        obs = observe(env, state, agent.state_mode)
        scores = nc.forward(nets.actor, obs)
        action = schedule_from_scores(env, state, scores, agent.state_mode)
        state, _, info = env_step(env, state, action, rng, reward_mode=agent.reward_mode)
        n_arr += info["arrivals"]
        n_exp += info["expired"]
    return n_exp / max(n_arr, 1), n_arr, n_exp
