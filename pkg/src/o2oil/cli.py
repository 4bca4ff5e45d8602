"""Command-line driver for the offline-to-online imitation pipeline.

Subcommands mirror the pipeline stages: gen-data, pretrain (reward fit,
saddle solve, policy extraction), stitch (pure algebra, no data), finetune
(adversarial online refinement), oracle-check (fixture regression suite),
offrl (reward-labelled variant), eval, and report. Runs are configured by a
flat key=value registry (file via --config, overrides via --set); unknown
keys are rejected and every run directory receives a resolved-config
snapshot, which together make runs diffable and reproducible.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import pathlib
import sys
import time

import numpy as np

from . import fixtures as fixture_mod
from .data import (Dataset, empirical_distribution, estimate_initial_distribution,
                   merge_datasets, read_dataset, sample_trajectories, write_dataset)
from .finetune import (GailConfig, GailDiscriminator, LearningCurve,
                       TabularSoftmaxPolicy, make_discriminator, run_gail,
                       unlearning_experiment, write_report)
from .mdp import (TabularMdp, TabularPolicy, build_gridworld, policy_return,
                  value_iteration)
from .offrl import OffRlConfig, extract_offline_rl_policy, solve_offline_rl
from .oracle import duality_gap, primal_brute_force, write_gap_report
from .policy import (extract_policy_closed_form, load_policy, occupancy_divergence,
                     save_policy)
from .reward import (DensityDiscriminator, auxiliary_reward,
                     fit_discriminator_closed_form)
from .ssp import (DualVariables, PopulationProblem, SspConfig, dual_value,
                  kkt_residual, solve_ssp)
from .stitch import StitchedDiscriminator, stitch_discriminator

DEFAULTS = {
    "env.width": 8,
    "env.height": 8,
    "env.goal_x": 7,
    "env.goal_y": 7,
    "env.slip": 0.1,
    "env.step_penalty": -0.01,
    "env.gamma": 0.99,
    "data.horizon": 64,
    "data.seed": 0,
    "data.expert_epsilon": 0.05,
    "reward.alpha": 1.0,
    "reward.beta": 0.0,
    "reward.clip_lo": 0.1,
    "reward.clip_hi": 0.9,
    "ssp.lr_nu": 3e-4,
    "ssp.lr_y": 3e-4,
    "ssp.iterations": 200000,
    "ssp.mode": "exact",
    "ssp.strategy": "gda",
    "ssp.kappa": 0.0,
    "ssp.seed": 0,
    "ssp.undiscounted": False,
    "ssp.lr_end_factor": 1e-6,
    "gail.episodes": 200,
    "gail.horizon": 64,
    "gail.lr_disc": 1e-5,
    "gail.lr_policy": 1e-4,
    "gail.disc_steps": 1,
    "gail.policy_steps": 1,
    "gail.rollout_batch": 5,
    "gail.seed": 0,
    "offrl.alpha": 1.0,
    "oracle.tolerance": 1e-3,
}


class CliError(Exception):
    """Validation problem: maps to exit code 1."""


def _coerce(key: str, raw: str):
    ref = DEFAULTS[key]
    if isinstance(ref, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise CliError(f"config key {key} expects a boolean, got {raw!r}")
    try:
        return type(ref)(raw)
    except ValueError as exc:
        raise CliError(f"config key {key}: {exc}") from exc


def load_config(config_path: str | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    pairs = []
    if config_path:
        path = pathlib.Path(config_path)
        if not path.exists():
            raise CliError(f"config file not found: {config_path} (--config)")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{config_path}:{lineno}: expected key = value")
            k, v = (part.strip() for part in line.split("=", 1))
            pairs.append((k, v))
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = (part.strip() for part in item.split("=", 1))
        pairs.append((k, v))
    for k, v in pairs:
        if k not in DEFAULTS:
            raise CliError(f"unknown config key {k!r}")
        cfg[k] = _coerce(k, v)
    return cfg


def write_snapshot(out_dir: pathlib.Path, cfg: dict, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in sorted(cfg.items())]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    (out_dir / "resolved.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_env(cfg: dict, env_json: str | None) -> TabularMdp:
    if env_json:
        path = pathlib.Path(env_json)
        if not path.exists():
            raise CliError(f"environment file not found: {env_json} (--env-json)")
        return TabularMdp.from_json(path.read_text(encoding="utf-8"))
    return build_gridworld(cfg["env.width"], cfg["env.height"],
                           (cfg["env.goal_x"], cfg["env.goal_y"]),
                           slip=cfg["env.slip"], step_penalty=cfg["env.step_penalty"],
                           discount=cfg["env.gamma"])


def _behavior_policy(mdp: TabularMdp, name: str, epsilon: float) -> TabularPolicy:
    if name == "random":
        return TabularPolicy.uniform(mdp.n_states, mdp.n_actions)
    if name == "expert":
        greedy = value_iteration(mdp)
        return TabularPolicy((1 - epsilon) * greedy.probs + epsilon / mdp.n_actions)
    raise CliError(f"unknown policy {name!r} (expected expert or random)")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, cfg) -> int:
    mdp = build_env(cfg, args.env_json)
    policy = _behavior_policy(mdp, args.policy, cfg["data.expert_epsilon"])
    ds = sample_trajectories(mdp, policy, args.n_traj, cfg["data.horizon"],
                             seed=cfg["data.seed"], source=args.source,
                             record_rewards=args.record_rewards)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds)
    print(f"wrote {len(ds)} transitions to {out}")
    return 0


def _save_dual(path, dual: DualVariables, alpha: float) -> None:
    doc = {"nu": dual.nu.tolist(), "y": dual.y.tolist(), "lam": dual.lam,
           "alpha": alpha}
    path.write_text(json.dumps(doc), encoding="utf-8")


def _load_dual(path) -> tuple[DualVariables, float]:
    doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    dual = DualVariables(nu=np.asarray(doc["nu"]), y=np.asarray(doc["y"]),
                         lam=doc["lam"])
    return dual, float(doc["alpha"])


def _save_disc(path, disc: DensityDiscriminator) -> None:
    doc = {"kind": "tabular", "values": disc.values.tolist(),
           "defined": disc.defined_mask.tolist(), "clip": list(disc.clip_bounds)}
    path.write_text(json.dumps(doc), encoding="utf-8")


def _load_disc(path) -> DensityDiscriminator:
    doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    return DensityDiscriminator(values=np.asarray(doc["values"]),
                                defined_mask=np.asarray(doc["defined"], dtype=bool),
                                clip_bounds=tuple(doc["clip"]))


def cmd_pretrain(args, cfg) -> int:
    mdp = build_env(cfg, args.env_json)
    expert = read_dataset(args.expert)
    union = merge_datasets(expert, read_dataset(args.supp)) if args.supp else expert
    out_dir = pathlib.Path(args.out_dir)
    write_snapshot(out_dir, cfg, {"expert_path": args.expert, "supp_path": args.supp})

    shape = (mdp.n_states, mdp.n_actions)
    rho_e = empirical_distribution(expert, source="e", shape=shape)
    rho_o = empirical_distribution(union, shape=shape, smoothing=cfg["ssp.kappa"])
    disc = fit_discriminator_closed_form(
        rho_e, rho_o, clip_bounds=(cfg["reward.clip_lo"], cfg["reward.clip_hi"]))
    reward = auxiliary_reward(disc, alpha=cfg["reward.alpha"], beta=cfg["reward.beta"])

    ssp_cfg = SspConfig(lr_nu=cfg["ssp.lr_nu"], lr_y=cfg["ssp.lr_y"],
                        iterations=cfg["ssp.iterations"], alpha=cfg["reward.alpha"],
                        beta=cfg["reward.beta"], undiscounted=cfg["ssp.undiscounted"],
                        seed=cfg["ssp.seed"], mode=cfg["ssp.mode"],
                        strategy=cfg["ssp.strategy"],
                        lr_end_factor=cfg["ssp.lr_end_factor"], kappa=cfg["ssp.kappa"])
    initial = estimate_initial_distribution(union, n_states=mdp.n_states) \
        if cfg["ssp.mode"] == "sampled" else mdp.initial
    problem = union if cfg["ssp.mode"] == "sampled" else \
        PopulationProblem(rho_o=rho_o.probs, initial=initial)
    dual, diag = solve_ssp(reward, problem, mdp, ssp_cfg)

    pi = extract_policy_closed_form(rho_o, dual.y)
    _save_disc(out_dir / "discriminator.json", disc)
    _save_dual(out_dir / "dual.json", dual, cfg["reward.alpha"])
    save_policy(out_dir / "policy.json", pi)
    diag.to_csv(out_dir / "ssp_diagnostics.csv")
    kkt = kkt_residual(dual, reward, ssp_cfg, mdp, support=rho_o.support_mask)
    print(f"pretrain done: kkt={kkt:.3e} "
          f"return={policy_return(mdp, pi):.4f} artifacts in {out_dir}")
    return 0


def cmd_stitch(args, cfg) -> int:
    t0 = time.perf_counter()
    dual, alpha = _load_dual(args.dual)
    disc = _load_disc(args.disc)
    stitched = stitch_discriminator(disc, dual.y, alpha=alpha)
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(stitched.to_json(), encoding="utf-8")
    elapsed = time.perf_counter() - t0
    print(f"stitched discriminator written to {out} in {elapsed * 1e3:.1f} ms")
    return 0


def _run_one_finetune(out_dir: pathlib.Path, mdp: TabularMdp, args, cfg, seed: int) -> dict:
    policy_obj = load_policy(args.policy)
    if not isinstance(policy_obj, TabularPolicy):
        raise CliError("finetune expects a tabular policy artifact")
    expert = read_dataset(args.expert)
    gail_cfg = GailConfig(episodes=cfg["gail.episodes"], horizon=cfg["gail.horizon"],
                          disc_steps_per_iter=cfg["gail.disc_steps"],
                          policy_steps_per_iter=cfg["gail.policy_steps"],
                          lr_disc=cfg["gail.lr_disc"], lr_policy=cfg["gail.lr_policy"],
                          seed=seed, disc_init=args.disc_init,
                          rollout_batch=cfg["gail.rollout_batch"])
    stitched = None
    table = None
    if args.disc_init == "stitched":
        if not args.stitched:
            raise CliError("--disc-init stitched requires --stitched PATH")
        stitched = StitchedDiscriminator.from_json(
            pathlib.Path(args.stitched).read_text(encoding="utf-8"))
    elif args.disc_init == "table":
        if not args.disc_table:
            raise CliError("--disc-init table requires --disc-table PATH")
        table = np.asarray(json.loads(pathlib.Path(args.disc_table).read_text()))
    disc = make_discriminator(gail_cfg, mdp.n_states, mdp.n_actions,
                              stitched=stitched, table=table)
    policy = TabularSoftmaxPolicy.from_policy(policy_obj)
    policy, disc, curve = run_gail(mdp, policy, disc, expert, gail_cfg)
    run_dir = out_dir / f"seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    curve.to_csv(run_dir / "curve.csv")
    save_policy(run_dir / "policy_final.json", policy.as_tabular())
    final_return = policy_return(mdp, policy.as_tabular())
    return {"seed": seed, "final_return": final_return,
            "curve": str(run_dir / "curve.csv")}


def cmd_finetune(args, cfg) -> int:
    if not args.policy:
        raise CliError("finetune refuses to start without --policy (pretrained artifact)")
    if not args.disc_init:
        raise CliError("finetune refuses to start without an explicit --disc-init")
    mdp = build_env(cfg, args.env_json)
    out_dir = pathlib.Path(args.out_dir)
    write_snapshot(out_dir, cfg, {"policy": args.policy, "disc_init": args.disc_init,
                                  "seeds": args.seeds})
    seeds = [int(s) for s in args.seeds.split(",")]
    results = []
    if args.jobs > 1 and len(seeds) > 1:
        import concurrent.futures as futures
        with futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            tasks = [pool.submit(_run_one_finetune, out_dir, mdp, args, cfg, s)
                     for s in seeds]
            results = [t.result() for t in tasks]
    else:
        results = [_run_one_finetune(out_dir, mdp, args, cfg, s) for s in seeds]
    (out_dir / "summary.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
    for row in results:
        print(f"seed {row['seed']}: final return {row['final_return']:.4f}")
    return 0


def fixture_solve_config(alpha: float = 1.0, undiscounted: bool = False) -> SspConfig:
    """Solver settings used for the regression fixtures (oracle-grade)."""
    return SspConfig(lr_nu=0.1, lr_y=0.3, iterations=3000, lr_end_factor=1e-3,
                     alpha=alpha, undiscounted=undiscounted, strategy="polish")


def cmd_oracle_check(args, cfg) -> int:
    from .reward import log_ratio_reward
    tol = cfg["oracle.tolerance"]
    rows = []
    worst = 0.0
    for fx in fixture_mod.load_all():
        reward = log_ratio_reward(fx.rho_e, fx.rho_o)
        pop = PopulationProblem(rho_o=fx.rho_o.probs, initial=fx.mdp.initial)
        scfg = fixture_solve_config()
        dual, _ = solve_ssp(reward, pop, fx.mdp, scfg)
        oracle = primal_brute_force(fx.mdp, reward, fx.rho_o.probs)
        gap = duality_gap(oracle, dual.nu, reward, scfg, pop, fx.mdp)
        worst = max(worst, abs(gap))
        rows.append({"fixture": fx.fixture_id, "primal": f"{oracle.primal_value:.9g}",
                     "dual": f"{oracle.primal_value + gap:.9g}", "gap": f"{gap:.3e}"})
        print(f"{fx.fixture_id}: gap={gap:.3e}")
    if args.out:
        write_gap_report(args.out, rows)
    if worst > tol:
        print(f"FAIL: worst gap {worst:.3e} exceeds {tol}")
        return 2
    print(f"OK: all {len(rows)} gaps within {tol}")
    return 0


def cmd_offrl(args, cfg) -> int:
    mdp = build_env(cfg, args.env_json)
    data = read_dataset(args.data)
    out_dir = pathlib.Path(args.out_dir)
    write_snapshot(out_dir, cfg, {"data": args.data})
    ocfg = OffRlConfig(alpha=cfg["offrl.alpha"], iterations=cfg["ssp.iterations"],
                       lr_nu=cfg["ssp.lr_nu"], lr_y=cfg["ssp.lr_y"],
                       seed=cfg["ssp.seed"], mode=cfg["ssp.mode"],
                       kappa=cfg["ssp.kappa"])
    dual, diag = solve_offline_rl(data, mdp, ocfg)
    pi = extract_offline_rl_policy(data, dual.y, mdp, ocfg)
    _save_dual(out_dir / "dual.json", dual, cfg["offrl.alpha"])
    save_policy(out_dir / "policy.json", pi)
    diag.to_csv(out_dir / "ssp_diagnostics.csv")
    print(f"offrl done: return={policy_return(mdp, pi):.4f}")
    return 0


def cmd_eval(args, cfg) -> int:
    mdp = build_env(cfg, args.env_json)
    policy = load_policy(args.policy)
    if not isinstance(policy, TabularPolicy):
        raise CliError("eval expects a tabular policy artifact")
    ret = policy_return(mdp, policy)
    print(f"return {ret:.6f}")
    if args.expert:
        expert = read_dataset(args.expert)
        rho_e = empirical_distribution(expert, source="e",
                                       shape=(mdp.n_states, mdp.n_actions))
        kl = occupancy_divergence(mdp, policy, rho_e)
        print(f"kl_to_expert {kl:.6f}")
    return 0


def cmd_report(args, cfg) -> int:
    curves = [(pathlib.Path(p).stem, LearningCurve.from_csv(p)) for p in args.curves]
    if args.out_svg:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(7, 4))
        for name, curve in curves:
            xs, ys = curve.series(args.metric)
            ax.plot(xs, ys, label=name)
        ax.set_xlabel("environment episodes")
        ax.set_ylabel(args.metric)
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.out_svg)
        print(f"wrote {args.out_svg}")
    for name, curve in curves:
        xs, ys = curve.series(args.metric)
        if len(ys):
            print(f"{name}: first={ys[0]:.4f} last={ys[-1]:.4f} best={ys.max():.4f}")
    return 0


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key")
    parser = argparse.ArgumentParser(prog="o2oil",
                                     description="offline-to-online imitation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("gen-data", help="sample trajectories into a JSONL dataset")
    p.add_argument("--env-json")
    p.add_argument("--policy", required=True, choices=["expert", "random"])
    p.add_argument("--n-traj", type=int, required=True)
    p.add_argument("--source", default="s", choices=["e", "s"])
    p.add_argument("--record-rewards", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = add_parser("pretrain", help="reward fit, saddle solve, policy extraction")
    p.add_argument("--env-json")
    p.add_argument("--expert", required=True, help="expert dataset path")
    p.add_argument("--supp", help="supplementary dataset path")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = add_parser("stitch", help="assemble the aligned discriminator (no data)")
    p.add_argument("--dual", required=True)
    p.add_argument("--disc", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stitch)

    p = add_parser("finetune", help="adversarial online finetuning")
    p.add_argument("--env-json")
    p.add_argument("--policy", required=True, help="pretrained policy artifact")
    p.add_argument("--disc-init", required=True, choices=["stitched", "random", "table"])
    p.add_argument("--stitched", help="stitched discriminator artifact")
    p.add_argument("--disc-table", help="explicit discriminator table (JSON)")
    p.add_argument("--expert", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_finetune)

    p = add_parser("oracle-check", help="duality-gap regression suite")
    p.add_argument("--out", help="gap report CSV path")
    p.set_defaults(func=cmd_oracle_check)

    p = add_parser("offrl", help="reward-labelled offline policy optimization")
    p.add_argument("--env-json")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_offrl)

    p = add_parser("eval", help="exact return / divergence of a policy artifact")
    p.add_argument("--env-json")
    p.add_argument("--policy", required=True)
    p.add_argument("--expert")
    p.set_defaults(func=cmd_eval)

    p = add_parser("report", help="curve summaries and SVG plots")
    p.add_argument("--curves", nargs="+", required=True)
    p.add_argument("--metric", default="return")
    p.add_argument("--out-svg")
    p.set_defaults(func=cmd_report)
    return parser


def command_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(command_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
