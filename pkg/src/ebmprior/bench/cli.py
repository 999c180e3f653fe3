"""Command-line harness: ``python -m ebmprior.bench <command>``.

Exit codes: 0 full success, 1 partial failure (some environments or runs
failed), 2 bad arguments or config, 3 training diverged.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..core import RngStream, State, trajectory_to_dict
from ..costs import EBMFactor, Objective, SphereObstacles
from ..ebm import ModelField, load_checkpoint, save_checkpoint
from ..environments import Environment, load_dataset
from ..errors import ConfigInvalid, InvalidArgument, TrainingDiverged
from ..planners import PlanningProblem, multi_stochgpmp_plan
from . import exp1, exp2
from .config import Exp1Config, Exp2Config, PlanSettings, config_to_dict, load_config
from .parallel import default_threads
from .plots import plot_report
from .report import _csv, fmt

log = logging.getLogger("ebmprior.bench")

CONDITIONINGS = ("obstacle", "phase", "object", "trajectory", "bc")


class UsageError(Exception):
    pass


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _with_train(cfg, dsm_beta):
    if dsm_beta is None:
        return cfg
    return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, dsm_beta=dsm_beta))


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if isinstance(cfg, Exp2Config):
        summary = exp2.gen_data(cfg, args.out)
        print(json.dumps(summary))
        return 0
    summary = exp1.gen_data(cfg, args.out, args.mode, default_threads())
    for env_id, goals in sorted(summary["failed_goals"].items()):
        print(f"env {env_id}: no demonstration for goals {goals}", file=sys.stderr)
    for env_id, msg in sorted(summary["errors"].items()):
        print(f"env {env_id}: FAILED {msg}", file=sys.stderr)
    print(f"{summary['envs']} environments written to {args.out}")
    return 1 if summary["errors"] else 0


def _exp1_method(conditioning: str, source: str) -> str:
    return {
        "obstacle": f"ebm_{source}",
        "phase": "ebm_phase",
        "trajectory": "ebm_trajectory",
        "bc": "bc",
    }[conditioning]


def cmd_train(args) -> int:
    cfg = _with_train(_config(args), args.dsm_beta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(cfg, Exp2Config):
        if args.conditioning not in ("object", "bc"):
            raise UsageError("exp2 supports --conditioning object or bc")
        which = "bc" if args.conditioning == "bc" else args.target
        scene, grasp, inserts = exp2.load_data(args.dataset)
        res = exp2.train_component(cfg, scene, grasp, inserts, which)
        if which == "bc":
            model, hist = res
            exp1.write_history(out.with_suffix(".csv"), ["iteration", "loss"], hist)
        else:
            model = res.model
            exp1.write_history(out.with_suffix(".csv"), ["iteration", "total", "cd", "dsm"], res.history)
        save_checkpoint(model, out)
    else:
        if args.conditioning == "object":
            raise UsageError("object conditioning needs an exp2 config")
        if args.conditioning == "obstacle" and args.source not in ("expert", "free"):
            raise UsageError("--source must be expert or free")
        exp1.train_model(args.dataset, _exp1_method(args.conditioning, args.source), cfg, out)
    print(f"checkpoint written to {out}")
    return 0


def _plan_settings(body: dict) -> PlanSettings:
    fields = {f.name for f in dataclasses.fields(PlanSettings)}
    unknown = set(body) - fields
    if unknown:
        raise ConfigInvalid(f"unknown planner keys {sorted(unknown)}")
    return PlanSettings(**body)


def cmd_plan(args) -> int:
    """Plan one problem file; writes ``plan.json`` and per-iteration ``diagnostics.csv``."""
    prob = json.loads(Path(args.problem).read_text())
    env = Environment.from_dict(prob["environment"])
    settings = _plan_settings(prob.get("planner", {}))
    terms = []
    if prob.get("obstacle_weight", 0) > 0:
        terms.append(SphereObstacles(env.centers, env.radii, eps=prob.get("obstacle_margin", 0.3),
                                     weight=prob["obstacle_weight"]))
    if args.model:
        model = load_checkpoint(args.model)
        terms.append(EBMFactor(ModelField(model, env.centers.reshape(-1)), weight=settings.ebm_weight,
                               steps=settings.ebm_steps()))
    if not terms:
        raise UsageError("problem has no cost terms: give --model or obstacle_weight")
    goals = [State.at_rest(np.asarray(g, dtype=np.float64)) for g in prob["goals"]]
    problem = PlanningProblem(State.at_rest(np.asarray(prob["start"], dtype=np.float64)), goals,
                              Objective(terms), environment=env)
    seed = prob.get("seed", 0) if args.seed is None else args.seed
    res = multi_stochgpmp_plan(problem, settings.planner_config(int(prob.get("iterations", 50))),
                               RngStream(seed, (5,)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    body = {
        "environment": env.to_dict(),
        "goals": [g.q.tolist() for g in goals],
        "best": trajectory_to_dict(res.best),
        "best_index": list(res.best_index),
        "costs": res.costs.tolist(),
        "plans": {"stochgpmp": {f"{g}.{p}": trajectory_to_dict(res.trajectory(g, p))
                                for g in range(len(goals)) for p in range(res.means.shape[1])}},
    }
    (out / "plan.json").write_text(json.dumps(body, sort_keys=True))
    keys = ("iteration", "best_cost", "mean_cost", "ess")
    (out / "diagnostics.csv").write_text(_csv([keys] + [[fmt(h[k]) for k in keys] for h in res.history]))
    print(f"best plan goal {res.best_index[0]} plan {res.best_index[1]} cost {res.costs[res.best_index]:.6g}")
    return 0


def _parse_models(text: str) -> dict:
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"--models entries look like name=path, got {item!r}")
        name, path = item.split("=", 1)
        out[name.strip()] = load_checkpoint(path.strip())
    return out


def _exp1_eval_ids(cfg: Exp1Config, envs_dir):
    root = Path(envs_dir)
    eval_dir = root / "eval" if (root / "eval").exists() else root
    manifest, envs, _ = load_dataset(eval_dir, validate=False)
    for env in envs:
        regen = exp1.make_env(cfg, env.env_id)
        if not (np.array_equal(regen.centers, env.centers) and np.array_equal(regen.radii, env.radii)):
            raise UsageError(f"environment {env.env_id} does not match the config seed")
    train_ids = cfg.train_ids
    if (root / "train" / "manifest.json").exists():
        train_ids = json.loads((root / "train" / "manifest.json").read_text())["envs"]
    return [e.env_id for e in envs], train_ids


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.budgets:
        cfg = dataclasses.replace(cfg, budgets=tuple(int(b) for b in args.budgets.split(",")))
    models = _parse_models(args.models)
    if isinstance(cfg, Exp2Config):
        missing = {"grasp", "insert", "bc"} - set(models)
        if missing:
            raise UsageError(f"exp2 eval needs models {sorted(missing)}")
        report = exp2.run_experiment_2(cfg, args.out, default_threads(), models)
    else:
        if args.envs is None:
            raise UsageError("exp1 eval needs --envs")
        eval_ids, train_ids = _exp1_eval_ids(cfg, args.envs)
        report = exp1.evaluate(cfg, models, args.out, default_threads(), eval_ids, train_ids)
    for row in report.rates():
        print(f"{row['method']:>14} {row['budget']:>4}  {row['success_rate']:.3f}  ({row['successes']}/{row['trials']})")
    return 0


def cmd_plot(args) -> int:
    model = load_checkpoint(args.model) if args.model else None
    made = plot_report(args.report, args.out, model, args.resolution)
    for p in made:
        print(p)
    return 0


def cmd_run(args) -> int:
    """Full pipeline for one experiment config."""
    cfg = _config(args)
    out = Path(args.out)
    if isinstance(cfg, Exp2Config):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))
        report = exp2.run_experiment_2(cfg, out / "report", default_threads())
    else:
        report = exp1.run_experiment_1(cfg, out, default_threads(), reuse=not args.fresh)
        ckpt = out / "models" / "ebm_expert.json"
        plot_report(out / "report", out / "figs", load_checkpoint(ckpt) if ckpt.exists() else None)
    for row in report.rates():
        print(f"{row['method']:>14} {row['budget']:>4}  {row['success_rate']:.3f}  ({row['successes']}/{row['trials']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (default: exp1 desk scale)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ebmprior-bench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate worlds and demonstrations")
    g.add_argument("--out", required=True)
    g.add_argument("--mode", choices=("free", "expert", "both"), default="both")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train an EBM or BC policy")
    t.add_argument("--dataset", required=True)
    t.add_argument("--conditioning", choices=CONDITIONINGS, required=True)
    t.add_argument("--source", default="expert", help="obstacle conditioning data: expert or free")
    t.add_argument("--target", choices=("grasp", "insert"), default="grasp", help="exp2 object model")
    t.add_argument("--dsm-beta", type=float, help="DSM weight (0 disables the regularizer)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", parents=[common], help="solve one planning problem file")
    pl.add_argument("--problem", required=True)
    pl.add_argument("--model")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("eval", parents=[common], help="success rates over held-out problems")
    e.add_argument("--models", required=True, help="name=path[,name=path...]")
    e.add_argument("--envs", help="dataset directory with the eval split (exp1)")
    e.add_argument("--budgets", help="comma-separated iteration budgets")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    pt = sub.add_parser("plot", parents=[common], help="SVG figures from a report directory")
    pt.add_argument("--report", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--model", help="EBM checkpoint for the energy heatmap")
    pt.add_argument("--resolution", type=int, default=128)
    pt.set_defaults(func=cmd_plot)

    r = sub.add_parser("run", parents=[common], help="data, training, evaluation and plots in one go")
    r.add_argument("--out", required=True)
    r.add_argument("--fresh", action="store_true", help="ignore artifacts from earlier runs")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}; last finite iteration {exc.iteration - 1}", file=sys.stderr)
        return 3
    except (UsageError, ConfigInvalid, InvalidArgument, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
