"""Command-line front door.

Scenario files (YAML, every numeric key carrying its unit in the name) go
in; reproducible experiment runs come out as CSV/JSON artifacts in a
timestamped run directory stamped with the seed and a hash of the resolved
configuration. Exit codes are contract values: 0 success, 1 runtime error,
2 scenario validation failure, 3 infeasibility — each failure also emits a
machine-readable error record on stderr.

Subcommands: fbl, qos, optimize power|bandwidth, validate,
learn supervised|unsupervised|transfer, sched train|eval, export.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import crosslayer as cl
from . import drlsched as ds
from . import fbl
from . import learn as ln
from . import neuralcore as nc
from . import qos as qq
from . import sim as sm

__all__ = ["main", "load_scenario", "ScenarioError", "run_experiment", "export_results"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3

OUT_ROOT_ENV = "URLLCKIT_OUT_ROOT"


class ScenarioError(ValueError):
    pass


_SCHEMA = {
    "budget": {
        "total_bandwidth_hz",
        "antennas",
        "noise_psd_w_per_hz",
        "frame_ms",
    },
    "qos": {"e2e_delay_ms", "overall_loss", "loss_components"},
    "users": {
        "class",
        "alpha",
        "arrival_rate_pkts_per_s",
        "packet_bits",
        "mean_rate_bits_per_s",
        "fixed_power_w",
    },
    "sim": {"horizon", "warmup_fraction", "seed"},
    "learn": {
        "problem",
        "n_users",
        "alpha_low",
        "alpha_high",
        "label_scale",
        "fixed_power_w",
        "bandwidth_per_user_hz",
        "arrival_rate_pkts_per_s",
        "packet_bits",
        "n_train",
        "n_eval",
        "hidden",
        "epochs",
        "iterations",
        "learning_rate",
        "batch_size",
        "frozen_layers",
        "mean_rate_bits_per_s",
    },
    "sched": {
        "n_users",
        "rb_budget",
        "rb_symbols",
        "packet_bits",
        "arrival_prob",
        "mean_snr",
        "d_min",
        "d_max",
        "target_eps_c",
        "n_slots",
        "agent",
        "eval_slots",
    },
}


def _check_keys(section: str, mapping: dict, where: str):
    allowed = _SCHEMA[section]
    for key in mapping:
        if key not in allowed:
            raise ScenarioError(f"unknown key {key!r} in {where}")


def load_scenario(path) -> dict:
    """Parse and validate a scenario file; unknown keys are rejected."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario does not parse: {exc}")
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping of sections")
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ScenarioError(f"unknown section {section!r}")
        if section == "users":
            if not isinstance(content, list):
                raise ScenarioError("'users' must be a list")
            for i, user in enumerate(content):
                _check_keys("users", user, f"users[{i}]")
        else:
            if not isinstance(content, dict):
                raise ScenarioError(f"section {section!r} must be a mapping")
            _check_keys(section, content, f"section {section!r}")
    return raw


def apply_overrides(scenario: dict, overrides) -> dict:
    """Apply --override key.path=value entries (values parsed as YAML)."""
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        parts = key.split(".")
        node = scenario
        for p in parts[:-1]:
            node = node[int(p)] if isinstance(node, list) else node.setdefault(p, {})
        leaf = parts[-1]
        parsed = yaml.safe_load(value)
        if isinstance(node, list):
            node[int(leaf)] = parsed
        else:
            node[leaf] = parsed
    return scenario


def _require(scenario: dict, *sections: str):
    for s in sections:
        if s not in scenario:
            raise ScenarioError(f"scenario is missing the {s!r} section")


def build_qos(scenario: dict) -> qq.QosTarget:
    q = scenario["qos"]
    b = scenario["budget"]
    return qq.QosTarget(
        e2e_delay_s=q["e2e_delay_ms"] * 1e-3,
        overall_loss=q["overall_loss"],
        frame_s=b["frame_ms"] * 1e-3,
        n_components=q.get("loss_components", 2),
    )


def build_budget(scenario: dict) -> cl.SystemBudget:
    b = scenario["budget"]
    return cl.SystemBudget(
        total_bandwidth_hz=b["total_bandwidth_hz"],
        n_antennas=b["antennas"],
        noise_psd_w_per_hz=b["noise_psd_w_per_hz"],
        frame_s=b["frame_ms"] * 1e-3,
        qos=build_qos(scenario),
    )


def build_users(scenario: dict) -> list:
    users = []
    for i, u in enumerate(scenario["users"]):
        klass = u.get("class")
        if klass == "urllc":
            users.append(
                cl.UserProfile(
                    alpha=u["alpha"],
                    service_class=cl.URLLC,
                    src=qq.PoissonSource(
                        u["arrival_rate_pkts_per_s"], u["packet_bits"]
                    ),
                    fixed_power_w=u.get("fixed_power_w"),
                )
            )
        elif klass == "delay_tolerant":
            users.append(
                cl.UserProfile(
                    alpha=u["alpha"],
                    service_class=cl.DELAY_TOLERANT,
                    mean_rate_bits_per_s=u["mean_rate_bits_per_s"],
                )
            )
        else:
            raise ScenarioError(f"users[{i}]: class must be urllc or delay_tolerant")
    return users


def config_hash(scenario: dict, seed: int) -> str:
    blob = json.dumps({"scenario": scenario, "seed": seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def make_run_dir(out_root, subcommand: str, chash: str) -> Path:
    root = Path(out_root or os.environ.get(OUT_ROOT_ENV, "runs"))
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    base = root / f"{stamp}-{subcommand.replace(' ', '_')}-{chash}"
    run_dir = base
    counter = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{counter}")
        counter += 1
    run_dir.mkdir(parents=True)
    return run_dir


def write_records(run_dir: Path, name: str, records: list, fmt: str):
    """Write a record list as RFC-quoted CSV or one-JSON-per-line."""
    if fmt == "json":
        path = run_dir / f"{name}.json"
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path
    path = run_dir / f"{name}.csv"
    keys = sorted({k for rec in records for k in rec})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, quoting=csv.QUOTE_MINIMAL)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec)
    return path


def _emit_error(kind: str, exc: Exception, run_dir: Path | None):
    record = {"error_type": kind, "error_class": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(record) + "\n")
    if run_dir is not None and run_dir.exists():
        (run_dir / "error.json").write_text(json.dumps(record, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Subcommand bodies (each returns a list of result records)
# ---------------------------------------------------------------------------


def _cmd_fbl(scenario, seed, order):
    _require(scenario, "budget", "qos", "users")
    budget = build_budget(scenario)
    users = build_users(scenario)
    records = []
    for i, u in enumerate(users):
        if u.service_class != cl.URLLC:
            continue
        power = u.fixed_power_w if u.fixed_power_w is not None else 0.05
        for w in np.linspace(budget.total_bandwidth_hz / 20, budget.total_bandwidth_hz, 20):
            snr = u.alpha * budget.n_antennas * power / (
                w * budget.noise_psd_w_per_hz * budget.n_antennas
            )
            link = fbl.LinkConfig(w, snr, budget.frame_s, u.src.packet_bits)
            records.append(
                {
                    "user": i,
                    "bandwidth_hz": w,
                    "snr_linear": snr,
                    "shannon_bits_per_s": fbl.shannon_rate(link),
                    "na_rate_bits_per_s": fbl.na_rate(link, budget.qos.eps_c),
                    "decoding_error": fbl.decoding_error(link),
                }
            )
    return records


def _cmd_qos(scenario, seed, order):
    _require(scenario, "budget", "qos", "users")
    budget = build_budget(scenario)
    users = build_users(scenario)
    split = cl.split_budget(budget.qos)
    records = []
    for i, u in enumerate(users):
        if u.service_class != cl.URLLC:
            continue
        eb_pkts = qq.effective_bandwidth_poisson(u.src, budget.qos)
        eb_bits = eb_pkts * u.src.packet_bits
        theta = qq.qos_exponent(eb_bits, budget.qos)
        records.append(
            {
                "user": i,
                "effective_bandwidth_pkts_per_s": eb_pkts,
                "effective_bandwidth_bits_per_s": eb_bits,
                "theta_per_bit": theta.theta,
                "delay_violation_at_budget": qq.delay_violation_prob(
                    theta, eb_bits, split.queue_delay_s
                ),
                "transmission_delay_s": split.transmission_delay_s,
                "queue_delay_s": split.queue_delay_s,
                "eps_c": split.eps_c,
                "eps_q": split.eps_q,
            }
        )
    return records


def _cmd_optimize_power(scenario, seed, order):
    _require(scenario, "budget", "qos", "users")
    budget = build_budget(scenario)
    users = build_users(scenario)
    alloc = cl.min_total_power_allocation(users, budget, order=order)
    records = []
    for i, u in enumerate(users):
        records.append(
            {
                "user": i,
                "service_class": u.service_class,
                "alpha": u.alpha,
                "bandwidth_hz": float(alloc.bandwidth_hz[i]),
                "power_w": float(alloc.power_w[i]),
                "constraint_gap": float(alloc.constraint_gap[i]),
                "total_power_w": alloc.total_power_w,
                "feasible": alloc.feasible,
            }
        )
    return records


def _cmd_optimize_bandwidth(scenario, seed, order):
    _require(scenario, "budget", "qos", "users")
    budget = build_budget(scenario)
    users = build_users(scenario)
    records = []
    for i, u in enumerate(users):
        if u.service_class != cl.URLLC:
            continue
        if u.fixed_power_w is None:
            raise ScenarioError(f"users[{i}]: bandwidth problem needs fixed_power_w")
        sol = cl.min_bandwidth_for_user(u, budget, order=order)
        records.append(
            {
                "user": i,
                "alpha": u.alpha,
                "fixed_power_w": u.fixed_power_w,
                "min_bandwidth_hz": sol.bandwidth_hz,
                "constraint_value": sol.constraint_value,
                "relative_qos_error": cl.relative_qos_error(
                    sol.bandwidth_hz, u, budget, order=order
                ),
            }
        )
    return records


def _cmd_validate(scenario, seed, order):
    _require(scenario, "budget", "qos", "users")
    budget = build_budget(scenario)
    users = build_users(scenario)
    sim_cfg = scenario.get("sim", {})
    horizon = sim_cfg.get("horizon", 1_000_000)
    records = []
    for i, u in enumerate(users):
        if u.service_class != cl.URLLC:
            continue
        eb_pkts = qq.effective_bandwidth_poisson(u.src, budget.qos)
        cfg = sm.SimConfig(
            seed=sim_cfg.get("seed", seed),
            horizon=horizon,
            warmup_fraction=sim_cfg.get("warmup_fraction", 0.1),
        )
        _, summary = sm.run_queue_sim(
            u.src, eb_pkts * u.src.packet_bits, cfg,
            tail_thresholds_s=[budget.qos.queue_delay_s],
        )
        measured = summary.sojourn_quantiles[f"ccdf@{budget.qos.queue_delay_s:g}"]
        under_resolved = horizon < 100.0 / budget.qos.eps_q
        records.append(
            {
                "user": i,
                "analytic_eps_q": budget.qos.eps_q,
                "measured_tail": measured,
                "ratio": measured / budget.qos.eps_q,
                "n_packets": summary.n_after_warmup,
                "service_rate_bits_per_s": eb_pkts * u.src.packet_bits,
                "utilization": summary.utilization,
                "under_resolved": under_resolved,
            }
        )
        if under_resolved:
            sys.stderr.write(
                json.dumps(
                    {
                        "warning": "insufficient resolution",
                        "user": i,
                        "n_packets": horizon,
                        "needed": 100.0 / budget.qos.eps_q,
                    }
                )
                + "\n"
            )
    return records


def _learn_scenario(scenario, order) -> ln.LearnScenario:
    _require(scenario, "budget", "qos", "learn")
    cfg = scenario["learn"]
    budget = build_budget(scenario)
    problem = cfg["problem"]
    src = qq.PoissonSource(
        cfg.get("arrival_rate_pkts_per_s", 1000.0), cfg.get("packet_bits", 160.0)
    )
    template = cl.UserProfile(
        alpha=math.sqrt(cfg["alpha_low"] * cfg["alpha_high"]),
        service_class=cl.URLLC,
        src=src,
        fixed_power_w=cfg.get("fixed_power_w"),
    )
    return ln.LearnScenario(
        problem=problem,
        budget=budget,
        template=template,
        n_users=cfg["n_users"],
        alpha_low=cfg["alpha_low"],
        alpha_high=cfg["alpha_high"],
        label_scale=cfg["label_scale"],
        bandwidth_per_user_hz=cfg.get("bandwidth_per_user_hz"),
    )


def _cmd_learn_supervised(scenario, seed, order):
    sc = _learn_scenario(scenario, order)
    cfg = scenario["learn"]
    samples, info = ln.generate_labels(sc, cfg.get("n_train", 2000), seed)
    model = ln.make_policy_net(sc, cfg.get("hidden", [64, 64, 64]), seed)
    tc = nc.TrainConfig(
        learning_rate=cfg.get("learning_rate", 1e-3),
        batch_size=cfg.get("batch_size", 64),
        epochs=cfg.get("epochs", 200),
        seed=seed,
        optimizer="adam",
    )
    result = ln.train_supervised(model, samples, tc, label_scale=sc.label_scale)
    return [
        {"epoch": e, "train_loss": tr, "val_loss": vl,
         "n_infeasible_draws": info["n_infeasible_draws"]}
        for e, (tr, vl) in enumerate(zip(result.train_loss, result.val_loss))
    ]


def _cmd_learn_unsupervised(scenario, seed, order):
    sc = _learn_scenario(scenario, order)
    cfg = scenario["learn"]
    policy = ln.make_policy_net(sc, cfg.get("hidden", [64, 64, 64]), seed)
    mult = ln.make_multiplier_net(sc, cfg.get("hidden", [64, 64, 64]), seed + 1)
    tc = nc.TrainConfig(
        learning_rate=cfg.get("learning_rate", 1e-3),
        batch_size=cfg.get("batch_size", 64),
        epochs=1,
        seed=seed,
        optimizer="adam",
    )
    result = ln.train_unsupervised_primal_dual(
        policy, mult, sc, tc, n_iterations=cfg.get("iterations", 5000)
    )
    return [
        {"window": i, "mean_violation": v, "mean_bandwidth_hz": o,
         "stalled": result.stalled}
        for i, (v, o) in enumerate(
            zip(result.violation_trace, result.objective_trace)
        )
    ]


def _cmd_learn_transfer(scenario, seed, order):
    sc = _learn_scenario(scenario, order)
    cfg = scenario["learn"]
    if sc.problem != "power":
        raise ScenarioError("transfer study runs on the power problem")
    src_scenario = ln.LearnScenario(
        problem="power",
        budget=sc.budget,
        template=cl.UserProfile(
            alpha=sc.template.alpha,
            service_class=cl.DELAY_TOLERANT,
            mean_rate_bits_per_s=cfg.get("mean_rate_bits_per_s", 2e5),
        ),
        n_users=sc.n_users,
        alpha_low=sc.alpha_low,
        alpha_high=sc.alpha_high,
        label_scale=sc.label_scale,
        bandwidth_per_user_hz=sc.bandwidth_per_user_hz,
    )
    source_samples, _ = ln.generate_labels(src_scenario, cfg.get("n_train", 2000), seed)
    model = ln.make_policy_net(sc, cfg.get("hidden", [64, 64, 64]), seed)
    tc = nc.TrainConfig(
        learning_rate=cfg.get("learning_rate", 1e-3),
        batch_size=cfg.get("batch_size", 64),
        epochs=cfg.get("epochs", 200),
        seed=seed,
        optimizer="adam",
    )
    ln.train_supervised(model, source_samples, tc, label_scale=src_scenario.label_scale)
    target_samples, _ = ln.generate_labels(sc, cfg.get("n_eval", 200), seed + 1)
    frozen = cfg.get("frozen_layers", model.n_layers - 1)
    fine_tc = nc.TrainConfig(
        learning_rate=tc.learning_rate * 0.3,
        batch_size=tc.batch_size,
        epochs=tc.epochs,
        seed=seed + 2,
        optimizer="adam",
    )
    result = ln.finetune_transfer(
        model, target_samples, frozen, fine_tc, label_scale=sc.label_scale
    )
    return [
        {"epoch": e, "train_loss": tr, "val_loss": vl, "frozen_layers": frozen}
        for e, (tr, vl) in enumerate(zip(result.train_loss, result.val_loss))
    ]


def _sched_configs(scenario, seed):
    _require(scenario, "sched")
    cfg = scenario["sched"]
    env = ds.SchedEnvConfig(
        n_users=cfg.get("n_users", 4),
        rb_budget=cfg.get("rb_budget", 12),
        rb_symbols=cfg.get("rb_symbols", 84),
        packet_bits=cfg.get("packet_bits", 256.0),
        arrival_prob=cfg.get("arrival_prob", 0.5),
        mean_snr=tuple(cfg.get("mean_snr", [10.0] * cfg.get("n_users", 4))),
        d_min=cfg.get("d_min", 3),
        d_max=cfg.get("d_max", 8),
        target_eps_c=cfg.get("target_eps_c", 1e-3),
    )
    mode = cfg.get("agent", "ka")
    if mode == "ka":
        agent = ds.AgentConfig.knowledge_assisted(env)
    elif mode == "plain":
        agent = ds.AgentConfig.plain_ddpg()
    else:
        raise ScenarioError("sched.agent must be 'ka' or 'plain'")
    return env, agent, cfg


def _cmd_sched_train(scenario, seed, order, run_dir=None):
    env, agent, cfg = _sched_configs(scenario, seed)
    result = ds.train_scheduler(
        env, agent, cfg.get("n_slots", 50_000), seed,
        eval_slots=cfg.get("eval_slots", 20_000),
    )
    if run_dir is not None:
        nc.save_model(result.nets.actor, run_dir / "actor.fnn")
        nc.save_model(result.nets.critic, run_dir / "critic.fnn")
    records = [
        {"slot": s, "loss_rate": lr, "mean_reward": mr}
        for s, lr, mr in result.loss_rate_trace
    ]
    records.append(
        {
            "slot": -1,
            "loss_rate": result.final_loss_rate,
            "mean_reward": float("nan"),
        }
    )
    return records


def _cmd_sched_eval(scenario, seed, order, checkpoint=None):
    env, agent, cfg = _sched_configs(scenario, seed)
    if checkpoint is None:
        raise ScenarioError("sched eval needs --checkpoint pointing at actor.fnn")
    nets = ds.make_agent(env, agent, seed)
    nets.actor = nc.load_model(checkpoint)
    loss, n_arr, n_exp = ds.evaluate_scheduler(
        env, agent, nets, cfg.get("eval_slots", 20_000), seed
    )
    return [{"loss_rate": loss, "n_arrivals": n_arr, "n_expired": n_exp}]


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_experiment(args) -> int:
    """Execute one subcommand; returns the process exit code."""
    run_dir = None
    try:
        scenario = load_scenario(args.scenario)
        apply_overrides(scenario, args.override)
        chash = config_hash(scenario, args.seed)
        sub = args.command if args.command != "optimize" else f"optimize {args.problem}"
        if args.command == "learn":
            sub = f"learn {args.mode}"
        if args.command == "sched":
            sub = f"sched {args.mode}"
        run_dir = make_run_dir(args.out, sub, chash)
        (run_dir / "manifest.json").write_text(
            json.dumps(
                {
                    "subcommand": sub,
                    "seed": args.seed,
                    "config_hash": chash,
                    "scenario": scenario,
                    "argv": sys.argv[1:],
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        order = args.quadrature_order
        if args.command == "fbl":
            records = _cmd_fbl(scenario, args.seed, order)
        elif args.command == "qos":
            records = _cmd_qos(scenario, args.seed, order)
        elif args.command == "optimize" and args.problem == "power":
            records = _cmd_optimize_power(scenario, args.seed, order)
        elif args.command == "optimize" and args.problem == "bandwidth":
            records = _cmd_optimize_bandwidth(scenario, args.seed, order)
        elif args.command == "validate":
            records = _cmd_validate(scenario, args.seed, order)
        elif args.command == "learn" and args.mode == "supervised":
            records = _cmd_learn_supervised(scenario, args.seed, order)
        elif args.command == "learn" and args.mode == "unsupervised":
            records = _cmd_learn_unsupervised(scenario, args.seed, order)
        elif args.command == "learn" and args.mode == "transfer":
            records = _cmd_learn_transfer(scenario, args.seed, order)
        elif args.command == "sched" and args.mode == "train":
            records = _cmd_sched_train(scenario, args.seed, order, run_dir)
        elif args.command == "sched" and args.mode == "eval":
            records = _cmd_sched_eval(scenario, args.seed, order, args.checkpoint)
        else:
            raise ScenarioError(f"unknown command {args.command!r}")
        path = write_records(run_dir, "records", records, args.format)
        print(f"seed={args.seed} config_hash={chash} run_dir={run_dir} records={path}")
        return EXIT_OK
    except ScenarioError as exc:
        _emit_error("validation", exc, run_dir)
        return EXIT_VALIDATION
    except (cl.InfeasibleError, ln.ScenarioInfeasibleError, ds.RbCapError) as exc:
        _emit_error("infeasible", exc, run_dir)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - contract: exit 1 + error record
        _emit_error("runtime", exc, run_dir)
        return EXIT_RUNTIME


def export_results(run_root, fmt: str = "csv", out_path=None):
    """Merge every run's records into one table keyed by config hash.

    Rows are ordered deterministically (hash, file, row index) and carry no
    timestamps, so re-exporting the same runs is byte-identical.
    """
    root = Path(run_root)
    rows = []
    run_dirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.exists() else []
    for run_dir in run_dirs:
        manifest_path = run_dir / "manifest.json"
        record_files = sorted(run_dir.glob("records.*"))
        if not manifest_path.exists():
            if record_files:
                raise FileNotFoundError(f"{run_dir} holds records but no manifest")
            continue
        manifest = json.loads(manifest_path.read_text())
        for rec_path in record_files:
            if rec_path.suffix == ".json":
                records = [
                    json.loads(line)
                    for line in rec_path.read_text().splitlines()
                    if line.strip()
                ]
            elif rec_path.suffix == ".csv":
                with open(rec_path, newline="") as fh:
                    records = list(csv.DictReader(fh))
            else:
                continue
            for i, rec in enumerate(records):
                rows.append(
                    {
                        "config_hash": manifest["config_hash"],
                        "subcommand": manifest["subcommand"],
                        "seed": manifest["seed"],
                        "row": i,
                        **rec,
                    }
                )
    rows.sort(key=lambda r: (r["config_hash"], str(r["subcommand"]), r["row"]))
    root.mkdir(parents=True, exist_ok=True)
    out_path = Path(out_path) if out_path else root / f"merged.{fmt}"
    if fmt == "json":
        with open(out_path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    else:
        keys = ["config_hash", "subcommand", "seed", "row"] + sorted(
            {k for r in rows for k in r}
            - {"config_hash", "subcommand", "seed", "row"}
        )
        with open(out_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys, quoting=csv.QUOTE_MINIMAL)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    return out_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urllckit", description="Cross-layer URLLC toolkit experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        if scenario_required:
            p.add_argument("scenario", help="path to a YAML scenario file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output root (default: runs/)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE")
        p.add_argument("--quadrature-order", type=int, default=64)
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    for name in ("fbl", "qos", "validate"):
        common(sub.add_parser(name))
    p_opt = sub.add_parser("optimize")
    p_opt.add_argument("problem", choices=("power", "bandwidth"))
    common(p_opt)
    p_learn = sub.add_parser("learn")
    p_learn.add_argument("mode", choices=("supervised", "unsupervised", "transfer"))
    common(p_learn)
    p_sched = sub.add_parser("sched")
    p_sched.add_argument("mode", choices=("train", "eval"))
    common(p_sched)
    p_sched.add_argument("--checkpoint", default=None)
    p_export = sub.add_parser("export")
    p_export.add_argument("run_root")
    p_export.add_argument("--format", choices=("csv", "json"), default="csv")
    p_export.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "export":
        try:
            path = export_results(args.run_root, args.format, args.out)
            print(f"merged={path}")
            return EXIT_OK
        except FileNotFoundError as exc:
            _emit_error("validation", exc, None)
            return EXIT_VALIDATION
        except Exception as exc:  # noqa: BLE001
            _emit_error("runtime", exc, None)
            return EXIT_RUNTIME
    return run_experiment(args)


if __name__ == "__main__":
    sys.exit(main())
