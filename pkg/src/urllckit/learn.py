"""Learning pipelines over the cross-layer optimizers.

Labeled-sample generation (states are randomized large-scale gains, labels
are re-verified optimizer solutions), supervised regression onto those
labels, unsupervised primal-dual policy search on the Lagrangian of the
bandwidth problem, transfer fine-tuning with frozen prefixes, and the
normalized-accuracy / relative-QoS-error evaluation metrics.

Policies are small dense nets mapping the per-user normalized log-gains to
per-user allocations; a second net (or a scalar shortcut) carries the
nonnegative constraint multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import crosslayer as cl
from . import neuralcore as nc
from .numerics import make_rng

__all__ = [
    "LearnScenario",
    "LabeledSample",
    "DualState",
    "DivergenceError",
    "ScenarioInfeasibleError",
    "generate_labels",
    "stack_samples",
    "TrainResult",
    "train_supervised",
    "PrimalDualResult",
    "train_unsupervised_primal_dual",
    "finetune_transfer",
    "normalized_accuracy",
    "policy_bandwidths",
    "policy_relative_errors",
    "make_policy_net",
    "make_multiplier_net",
]


class DivergenceError(RuntimeError):
    """Training produced NaN/inf; carries the step it happened at."""


def _softplus_np(z):
    return np.where(z > 30.0, z, np.log1p(np.exp(np.minimum(z, 30.0))))


class ScenarioInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class LearnScenario:
    """A randomized family of allocation problems for one user population.

    ``problem`` selects the label solver: "power" labels are the minimum
    per-user powers at an equal bandwidth split, "bandwidth" labels are the
    minimum per-user bandwidths at the template's fixed power. States are
    per-user large-scale gains drawn log-uniform from [alpha_low, alpha_high]
    and fed to the nets as normalized log-gains in [-1, 1].
    """

    problem: str
    budget: cl.SystemBudget
    template: cl.UserProfile
    n_users: int
    alpha_low: float
    alpha_high: float
    label_scale: float  # output normalization (W or Hz)
    bandwidth_per_user_hz: float | None = None  # power problem only

    def __post_init__(self):
        if self.problem not in ("power", "bandwidth"):
            raise ValueError("problem must be 'power' or 'bandwidth'")
        if not 0 < self.alpha_low < self.alpha_high:
            raise ValueError("need 0 < alpha_low < alpha_high")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")
        if self.label_scale <= 0:
            raise ValueError("label_scale must be positive")
        if self.problem == "power" and self.bandwidth_per_user_hz is None:
            raise ValueError("power scenario needs bandwidth_per_user_hz")
        if self.problem == "bandwidth" and self.template.fixed_power_w is None:
            raise ValueError("bandwidth scenario needs template.fixed_power_w")

    def draw_alphas(self, count: int, rng) -> np.ndarray:
        lo, hi = math.log(self.alpha_low), math.log(self.alpha_high)
        return np.exp(rng.uniform(lo, hi, size=(count, self.n_users)))

    def features(self, alphas: np.ndarray) -> np.ndarray:
        lo, hi = math.log(self.alpha_low), math.log(self.alpha_high)
        return (2.0 * np.log(alphas) - (hi + lo)) / (hi - lo)

    def solve_batch(self, alphas: np.ndarray) -> np.ndarray:
        """Optimal per-user labels for a (count, K) gain matrix (NaN = infeasible)."""
        flat = alphas.reshape(-1)
        if self.problem == "bandwidth":
            sol = cl.min_bandwidth_batch(flat, self.template, self.budget)
        elif self.template.service_class == cl.URLLC:
            sol = cl.min_power_batch(
                flat, self.template, self.budget, self.bandwidth_per_user_hz
            )
        else:
            sol = cl.delay_tolerant_min_power_batch(
                flat, self.template, self.budget, self.bandwidth_per_user_hz
            )
        return sol.reshape(alphas.shape)


@dataclass(frozen=True)
class LabeledSample:
    """One training pair: normalized state features and the optimal labels."""

    state: np.ndarray
    label: np.ndarray
    alphas: np.ndarray


@dataclass
class DualState:
    """Dual variables: scalar multipliers plus the per-state multiplier net."""

    lambda_stat: np.ndarray
    multiplier_net: nc.FnnModel | None
    dual_lr: float

    def project(self):
        np.maximum(self.lambda_stat, 0.0, out=self.lambda_stat)


def generate_labels(
    scenario: LearnScenario,
    count: int,
    seed: int,
    max_redraw_rounds: int = 50,
) -> tuple[list, dict]:
    """Draw states, solve for labels, keep only re-verified feasible ones.

    Infeasible draws are resampled; the second return value reports how many
    were discarded. A scenario that cannot produce ``count`` feasible
    samples within the redraw budget raises ScenarioInfeasibleError.
    """
    rng = make_rng(seed)
    kept_states, kept_labels, kept_alphas = [], [], []
    n_infeasible = 0
    rounds = 0
    need = count
    while need > 0:
        if rounds > max_redraw_rounds:
            raise ScenarioInfeasibleError(
                f"{n_infeasible} infeasible draws while collecting {count} samples"
            )
        rounds += 1
        alphas = scenario.draw_alphas(need, rng)
        labels = scenario.solve_batch(alphas)
        ok = ~np.isnan(labels).any(axis=1)
        n_infeasible += int((~ok).sum())
        if ok.any():
            kept_alphas.append(alphas[ok])
            kept_labels.append(labels[ok])
            kept_states.append(scenario.features(alphas[ok]))
            need = count - sum(a.shape[0] for a in kept_alphas)
    if count == 0:
        return [], {"n_infeasible_draws": 0}
    states = np.concatenate(kept_states)[:count]
    labels = np.concatenate(kept_labels)[:count]
    alphas = np.concatenate(kept_alphas)[:count]
    samples = [
        LabeledSample(states[i], labels[i], alphas[i]) for i in range(count)
    ]
    return samples, {"n_infeasible_draws": n_infeasible}


def stack_samples(samples: Sequence[LabeledSample]):
    x = np.stack([s.state for s in samples])
    y = np.stack([s.label for s in samples])
    return x, y


@dataclass
class TrainResult:
    model: nc.FnnModel
    train_loss: list
    val_loss: list


def _mse(model: nc.FnnModel, x: np.ndarray, y: np.ndarray) -> float:
    pred = nc.forward(model, x)
    return float(np.mean((pred - y) ** 2))


def train_supervised(
    model: nc.FnnModel,
    samples: Sequence[LabeledSample],
    cfg: nc.TrainConfig,
    label_scale: float = 1.0,
    holdout_fraction: float = 0.2,
) -> TrainResult:
    """Minimize the mean squared output-label error with minibatches.

    Labels are trained in units of ``label_scale`` so the loss is O(1).
    A NaN loss aborts with a DivergenceError naming the offending epoch.
    """
    x, y = stack_samples(samples)
    y = y / label_scale
    if model.weights[0].shape[1] == 1 and x.ndim == 2 and x.shape[1] != 1:
        # Shared per-user subnet: every user of every state is one pair.
        x = x.reshape(-1, 1)
        y = y.reshape(-1, 1)
    rng = make_rng(cfg.seed)
    n = x.shape[0]
    n_val = int(n * holdout_fraction)
    perm = rng.permutation(n)
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    xv, yv = x[val_idx], y[val_idx]
    xt, yt = x[tr_idx], y[tr_idx]
    state = nc.OptimizerState.for_model(model)
    train_curve, val_curve = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(xt.shape[0])
        for start in range(0, xt.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = xt[idx], yt[idx]
            pred, cache = nc.forward_cached(model, xb)
            upstream = 2.0 * (pred - yb) / pred.size
            grads = nc.backward(model, cache, upstream)
            nc.sgd_step(model, grads, cfg, state)
        tr = _mse(model, xt, yt)
        vl = _mse(model, xv, yv) if n_val else tr
        if not math.isfinite(tr):
            raise DivergenceError(
                f"training loss became non-finite at epoch {epoch} "
                f"(lr={cfg.learning_rate}, optimizer={cfg.optimizer})"
            )
        train_curve.append(tr)
        val_curve.append(vl)
    return TrainResult(model=model, train_loss=train_curve, val_loss=val_curve)


def make_policy_net(
    scenario: LearnScenario,
    hidden: Sequence[int],
    seed: int,
    per_user: bool = True,
):
    """Policy net: normalized log-gains in, softplus allocations out.

    The allocation problem is separable, a scalar map per user, so the
    default is one shared 1-in-1-out subnet applied to each user's gain
    (every state contributes K function samples per step). ``per_user=False``
    builds a joint K-in-K-out net instead, the shape the transfer study
    fine-tunes. Hidden layers are tanh: saddle-seeking training slams
    parameters around far more than plain regression, and tanh units cannot
    die the way relus do (their gradient never reaches exactly zero).
    """
    width = 1 if per_user else scenario.n_users
    sizes = [width, *hidden, width]
    acts = ["tanh"] * len(hidden) + ["softplus"]
    return nc.fnn_init(sizes, acts, seed)


def make_multiplier_net(
    scenario: LearnScenario,
    hidden: Sequence[int],
    seed: int,
    initial_value: float = 2.0,
    per_user: bool = True,
):
    """Per-state multiplier net with an identity head.

    The training loop maps the head through softplus, so multipliers stay
    nonnegative, but ascends the raw head directly (straight-through);
    otherwise a phase of slack constraints can saturate the head so deep
    that the dual never recovers when violations reappear. The output bias
    starts at ``initial_value`` so the constraint pushes back from the very
    first iteration.
    """
    width = 1 if per_user else scenario.n_users
    sizes = [width, *hidden, width]
    acts = ["tanh"] * len(hidden) + ["identity"]
    net = nc.fnn_init(sizes, acts, seed)
    net.biases[-1][:] = initial_value
    return net


def _net_apply(net: nc.FnnModel, features: np.ndarray):
    """Forward per-state features through a joint or shared-per-user net."""
    if net.weights[0].shape[1] == 1 and features.ndim == 2 and features.shape[1] != 1:
        out, cache = nc.forward_cached(net, features.reshape(-1, 1))
        return out.reshape(features.shape), cache
    return nc.forward_cached(net, features)


def _net_backstep(net, cache, upstream, cfg, state):
    """Backprop an upstream shaped like the per-state output grid."""
    if net.weights[0].shape[1] == 1 and upstream.ndim == 2 and upstream.shape[1] != 1:
        upstream = upstream.reshape(-1, 1)
    nc.sgd_step(net, nc.backward(net, cache, upstream), cfg, state)


@dataclass
class PrimalDualResult:
    policy: nc.FnnModel
    dual: DualState
    violation_trace: list
    objective_trace: list
    stalled: bool


def _constraint_h_batch(
    scenario: LearnScenario, alphas: np.ndarray, w_hat: np.ndarray
) -> np.ndarray:
    """Log-space QoS constraint value per (state, user); <= 0 is satisfied."""
    from scipy.special import logsumexp

    budget = scenario.budget
    template = scenario.template
    nodes, weights = cl._gain_nodes(budget, 64, "gamma")
    theta, eb_bits = cl._ec_constraint_params(template, budget)
    from .numerics import q_func_inv

    qinv = q_func_inv(budget.qos.eps_c)
    w = w_hat[..., None]
    snr = alphas[..., None] * nodes * template.fixed_power_w / (
        w * budget.noise_psd_w_per_hz * budget.n_antennas
    )
    v = -np.expm1(-2.0 * np.log1p(snr))
    s = np.maximum(
        (w / math.log(2.0))
        * (np.log1p(snr) - np.sqrt(v / (budget.frame_s * w)) * qinv),
        0.0,
    )
    z = -theta * budget.frame_s * s
    return logsumexp(z, axis=-1, b=weights) + theta * budget.frame_s * eb_bits


def train_unsupervised_primal_dual(
    policy: nc.FnnModel,
    multiplier: nc.FnnModel | None,
    scenario: LearnScenario,
    cfg: nc.TrainConfig,
    n_iterations: int = 10_000,
    dual_lr_scale: float = 2.0,
    train_alphas: np.ndarray | None = None,
    patience: int = 2000,
    fd_step: float = 1e-3,
    constraint_margin: float = 0.03,
    augmentation_rho: float = 25.0,
) -> PrimalDualResult:
    """Alternating descent/ascent on the Lagrangian of the bandwidth problem.

    Each iteration draws a state batch, descends the policy along
    d/dW [ W/label_scale + v(s) * h(s, W) ] and ascends the multipliers along
    the constraint value h. ``multiplier=None`` uses scalar per-user
    multipliers (the single-statistic-constraint shortcut) instead of the
    per-state net. The constraint gradient is a central finite difference;
    the constraint itself is separable per user so that costs two extra
    batched quadratures.

    Two-timescale damping keeps the saddle search from orbiting: the policy
    uses the configured optimizer while the multipliers move by plain
    (projected) gradient steps at ``dual_lr_scale`` times the primal rate,
    and both rates step down over the run. ``constraint_margin`` tightens
    the trained constraint (h + margin <= 0), reserving slack so the
    stochastic wobble of the policy stays on the feasible side, which is
    exactly the extra-bandwidth reservation the approach is known for.
    ``augmentation_rho`` adds the quadratic penalty of the augmented
    Lagrangian, rho/2 * max(h + margin, 0)^2: it pins the policy near
    feasibility pointwise even where the multiplier net is still catching
    up, without changing the saddle point being sought.

    The violation trace holds windowed means of max(h, 0); ``stalled`` is
    set when the trace stops improving for ``patience`` iterations.

    Training floors the bandwidth at ``w_floor_frac`` of the label scale:
    below that the clamped finite-blocklength rate flattens out and the
    constraint loses its gradient, which would strand a collapsed policy.
    """
    if scenario.problem != "bandwidth":
        raise ValueError("primal-dual search is defined on the bandwidth problem")
    w_floor_frac = 0.05
    rng = make_rng(cfg.seed)
    dual = DualState(
        lambda_stat=np.zeros(scenario.n_users),
        multiplier_net=multiplier,
        dual_lr=cfg.learning_rate * dual_lr_scale,
    )
    p_state = nc.OptimizerState.for_model(policy)
    m_state = (
        nc.OptimizerState.for_model(multiplier) if multiplier is not None else None
    )
    scale = scenario.label_scale
    violation_trace, objective_trace = [], []
    window_viol, window_obj = [], []
    best_viol = math.inf
    best_at = 0
    stalled = False
    pool = train_alphas
    for it in range(n_iterations):
        frac = it / n_iterations
        decay = 1.0 if frac < 0.5 else (0.2 if frac < 0.8 else 0.05)
        p_cfg = nc.TrainConfig(
            learning_rate=cfg.learning_rate * decay,
            optimizer=cfg.optimizer,
        )
        m_cfg = nc.TrainConfig(
            learning_rate=dual.dual_lr * decay, optimizer="sgd"
        )
        if pool is not None:
            idx = rng.integers(0, pool.shape[0], size=cfg.batch_size)
            alphas = pool[idx]
        else:
            alphas = scenario.draw_alphas(cfg.batch_size, rng)
        x = scenario.features(alphas)
        out, cache = _net_apply(policy, x)
        w_hat = np.maximum(out * scale, w_floor_frac * scale)
        h = _constraint_h_batch(scenario, alphas, w_hat) + constraint_margin
        if multiplier is not None:
            v_raw, v_cache = _net_apply(multiplier, x)
            v = _softplus_np(v_raw)
        else:
            v = np.broadcast_to(dual.lambda_stat, h.shape)

        # Primal descent on the augmented Lagrangian:
        # dL/dW = 1/scale + [v + rho*max(h,0)] * dh/dW, chained into the net.
        dw = fd_step * w_hat
        h_plus = _constraint_h_batch(scenario, alphas, w_hat + dw) + constraint_margin
        h_minus = _constraint_h_batch(scenario, alphas, w_hat - dw) + constraint_margin
        dh_dw = (h_plus - h_minus) / (2.0 * dw)
        v_eff = v + augmentation_rho * np.maximum(h, 0.0)
        upstream = (1.0 / scale + v_eff * dh_dw) * scale / (cfg.batch_size)
        _net_backstep(policy, cache, upstream, p_cfg, p_state)
        if not all(np.isfinite(w).all() for w in policy.weights):
            raise DivergenceError(f"policy parameters non-finite at iteration {it}")

        # Dual ascent on the same batch, straight through the softplus map.
        if multiplier is not None:
            _net_backstep(multiplier, v_cache, -h / cfg.batch_size, m_cfg, m_state)
        else:
            dual.lambda_stat += m_cfg.learning_rate * h.mean(axis=0)
            dual.project()

        window_viol.append(float(np.maximum(h, 0.0).mean()))
        window_obj.append(float(w_hat.mean()))
        if (it + 1) % 100 == 0:
            viol = float(np.mean(window_viol))
            violation_trace.append(viol)
            objective_trace.append(float(np.mean(window_obj)))
            window_viol, window_obj = [], []
            if viol < best_viol - 1e-12:
                best_viol = viol
                best_at = it
            elif it - best_at > patience:
                stalled = True
    return PrimalDualResult(
        policy=policy,
        dual=dual,
        violation_trace=violation_trace,
        objective_trace=objective_trace,
        stalled=stalled,
    )


def finetune_transfer(
    source_model: nc.FnnModel,
    new_samples: Sequence[LabeledSample],
    frozen_layers: int,
    cfg: nc.TrainConfig,
    label_scale: float = 1.0,
) -> TrainResult:
    """Adapt a trained net to a new task by retraining only the suffix.

    Clones the source, freezes the first ``frozen_layers`` layers, and runs
    the usual supervised loop (callers pass a reduced learning rate). With
    ``frozen_layers=0`` and the same config this is ordinary training from
    the source initialization.
    """
    if frozen_layers >= source_model.n_layers:
        raise ValueError("at least the output layer must stay trainable")
    model = nc.clone_model(source_model)
    nc.freeze_prefix(model, frozen_layers)
    return train_supervised(model, new_samples, cfg, label_scale=label_scale)


def normalized_accuracy(approx_powers, optimal_powers) -> float:
    """1 - (sum(approx) - sum(optimal)) / sum(optimal).

    Equals one for a perfect allocation and decreases linearly in the extra
    resource spent; values above one flag an approximation that undershoots
    the optimum (and is therefore infeasible somewhere).
    """
    p_hat = np.asarray(approx_powers, dtype=float)
    p_opt = np.asarray(optimal_powers, dtype=float)
    if p_hat.shape != p_opt.shape:
        raise ValueError("power vectors must have matching shapes")
    denom = p_opt.sum()
    if denom == 0.0:
        raise ZeroDivisionError("optimal powers sum to zero")
    return float(1.0 - (p_hat.sum() - denom) / denom)


def policy_bandwidths(
    policy: nc.FnnModel, scenario: LearnScenario, alphas: np.ndarray
) -> np.ndarray:
    """Evaluate a trained policy, mapping net outputs back to Hz."""
    out, _ = _net_apply(policy, scenario.features(alphas))
    return np.maximum(out * scenario.label_scale, 1e-6 * scenario.label_scale)


def policy_relative_errors(
    policy: nc.FnnModel, scenario: LearnScenario, alphas: np.ndarray
) -> np.ndarray:
    """Relative QoS error of every (state, user) pair under a policy."""
    w_hat = policy_bandwidths(policy, scenario, alphas)
    h = _constraint_h_batch(scenario, alphas, w_hat)
    return np.maximum(np.expm1(h), 0.0)
