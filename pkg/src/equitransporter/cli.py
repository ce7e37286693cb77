"""Command line: ``etp gen|train|eval|verify|export``.

Settings come from an optional JSON config file (``--config``) whose keys are
:class:`RunConfig` fields; explicit flags override it.  Everything written to
stdout and to output files depends only on the inputs; timestamps and timings
go to stderr.

Exit codes: 0 ok, 1 invalid configuration, 2 property failure, 3 IO or format
error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .fields import FormatError
from .ravens import TASKS, dataset_read, dataset_write, generate
from .training import (RunConfig, agent_policy, evaluate_policy, make_demos, oracle_policy,
                       split_seeds, train)
from .transporter import ModelConfig, TransporterAgent, export_maps

log = logging.getLogger("equitransporter")

EXIT_OK, EXIT_CONFIG, EXIT_PROPERTY, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for property failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path, data: bytes) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    return sha256(data)


# flag name -> RunConfig field
_OVERRIDES = {
    "task": "task", "seed": "seed", "n": "n", "demos": "demos", "steps": "steps",
    "episodes": "eval_episodes", "val_episodes": "val_episodes", "val_every": "val_every",
    "lr": "lr", "place": "place", "pick": "pick", "stop_at": "stop_at",
}


def load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise OSError(f"cannot read config {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config {args.config} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    try:
        cfg = RunConfig(**data)
    except TypeError as e:
        raise UsageError(str(e)) from e
    if cfg.task not in TASKS:
        raise UsageError(f"unknown task {cfg.task!r}; choose from {', '.join(TASKS)}")
    if cfg.place not in ("equivariant", "baseline") or cfg.pick not in ("equivariant", "baseline"):
        raise UsageError("pick/place must be 'equivariant' or 'baseline'")
    try:
        warnings = cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e
    if getattr(args, "command", None) == "train":
        for w in warnings:
            log.warning(w)
    return cfg


# ----------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = load_config(args)
    demos = make_demos(cfg.task, split_seeds("train", cfg.seed, cfg.demos))
    digest = sha256(dataset_write(demos, args.out))
    print(f"wrote {len(demos)} {cfg.task} demonstrations to {args.out}")
    print(f"sha256 {digest}")
    return EXIT_OK


def _agent_for(cfg: RunConfig) -> TransporterAgent:
    return TransporterAgent(ModelConfig(n=cfg.n, place=cfg.place, pick=cfg.pick, lr=cfg.lr, seed=cfg.seed))


def cmd_train(args) -> int:
    cfg = load_config(args)
    demos = dataset_read(args.dataset)
    if not demos:
        raise UsageError(f"dataset {args.dataset} is empty")
    tasks = {d.task for d in demos}
    if len(tasks) != 1:
        raise UsageError(f"dataset mixes tasks: {sorted(tasks)}")
    task = tasks.pop()
    if args.task is not None and args.task != task:
        raise UsageError(f"--task {args.task} does not match the dataset task {task}")
    cfg = dataclasses.replace(cfg, task=task)

    if args.resume:
        agent, extra = TransporterAgent.from_bytes(Path(args.resume).read_bytes())
        log.info("resuming from %s at step %d", args.resume, agent.adam["pick"].step)
    else:
        agent = _agent_for(cfg)

    metrics = Path(args.metrics) if args.metrics else Path(args.out).with_suffix(".csv")
    metrics.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics, "a" if args.resume else "w") as fh:
        if not args.resume:
            fh.write("step,pick_loss,angle_loss,place_loss\n")

        def on_log(step, ls):
            fh.write(f"{step},{ls['pick']:.9g},{ls['angle']:.9g},{ls['place']:.9g}\n")
            if step % 50 == 0:
                log.info("step %d pick %.4f angle %.4f place %.4f", step, ls["pick"], ls["angle"], ls["place"])

        res = train(agent, demos, cfg, on_log)

    for step, s in res.curve:
        print(f"step {step:5d}  validation success {s:.3f}")
    extra = {"run_config": dataclasses.asdict(cfg), "best_step": res.best_step,
             "best_success": res.best_success, "curve": res.curve}
    last = agent.to_bytes(extra)
    if args.last:
        _write(args.last, last)
    if res.best_state is not None:
        agent.load_state(res.best_state)
        agent.adam = res.best_adam
    digest = _write(args.out, agent.to_bytes(extra))
    print(f"best step {res.best_step} validation success {res.best_success:.3f}")
    print(f"checkpoint {args.out} sha256 {digest}")
    print(f"metrics {metrics}")
    return EXIT_OK


def _load_agent(path) -> tuple[TransporterAgent, dict]:
    return TransporterAgent.from_bytes(Path(path).read_bytes())


def evaluation_report(results, seeds, task: str, policy: str) -> dict:
    rows = [{"seed": int(s), "success": int(r.success), "pick_ok": bool(r.pick_ok),
             "translation_error": float(r.translation_error), "rotation_error": float(r.rotation_error)}
            for s, r in zip(seeds, results)]
    return {
        "task": task,
        "policy": policy,
        "episodes": len(rows),
        "success_rate": float(np.mean([r["success"] for r in rows])) if rows else 0.0,
        "mean_translation_error": float(np.mean([r["translation_error"] for r in rows])) if rows else 0.0,
        "mean_rotation_error": float(np.mean([r["rotation_error"] for r in rows])) if rows else 0.0,
        "rows": rows,
    }


def cmd_eval(args) -> int:
    cfg = load_config(args)
    if args.oracle:
        policy, name = oracle_policy, "oracle"
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint or --oracle")
        agent, extra = _load_agent(args.checkpoint)
        if args.task is None and "run_config" in extra:
            cfg = dataclasses.replace(cfg, task=extra["run_config"]["task"])
        policy, name = agent_policy(agent), str(args.checkpoint)
    seeds = split_seeds("test", cfg.seed, cfg.eval_episodes)
    report = evaluation_report(evaluate_policy(policy, cfg.task, seeds), seeds, cfg.task, name)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text.encode())
    print(f"success rate {report['success_rate']:.3f} over {report['episodes']} {cfg.task} episodes")
    if args.out:
        print(f"report {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import profile, run_suite

    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.n % 2:
        raise UsageError("--n must be even (the pick angle head uses C_n/C_2)")
    print(f"property suite, C_{args.n}, {profile(args.n)} profile"
          + (", UNTIED KERNELS (negative control)" if args.untie else ""))
    checks = run_suite(args.n, untied=args.untie, seed=args.seed, quick=args.quick)
    for c in checks:
        print(c.line(timing=False))
        log.info("%s took %.2fs", c.name, c.seconds)
    failed = [c.name for c in checks if not c.passed]
    if args.json:
        _write(args.json, (json.dumps([{"name": c.name, "residual": c.residual, "tol": c.tol,
                                         "passed": c.passed, "detail": c.detail} for c in checks],
                                       indent=2) + "\n").encode())
    print(f"{len(checks) - len(failed)}/{len(checks)} passed")
    return EXIT_PROPERTY if failed else EXIT_OK


def cmd_export(args) -> int:
    cfg = load_config(args)
    agent, extra = _load_agent(args.checkpoint)
    if args.task is None and "run_config" in extra:
        cfg = dataclasses.replace(cfg, task=extra["run_config"]["task"])
    scene = generate(args.scene_seed, cfg.task)
    obs = scene.image.data
    pm = agent.pick_maps(obs)
    u, v = np.unravel_index(int(np.argmax(pm.position)), pm.position.shape)
    files = export_maps(pm, agent.place_map(obs, (u, v)), args.out)
    for f in files:
        print(f)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="etp", description="Equivariant pick-and-place toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, training=False):
        sp.add_argument("--config", help="JSON file with run settings")
        sp.add_argument("--task", choices=TASKS)
        sp.add_argument("--seed", type=int)
        if training:
            sp.add_argument("--n", type=int, help="rotation group order")
            sp.add_argument("--steps", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--place", choices=("equivariant", "baseline"))
            sp.add_argument("--pick", choices=("equivariant", "baseline"))
            sp.add_argument("--val-every", type=int)
            sp.add_argument("--val-episodes", type=int)
            sp.add_argument("--stop-at", type=float, help="stop once validation success reaches this")

    sp = sub.add_parser("gen", help="write a dataset of oracle demonstrations")
    common(sp)
    sp.add_argument("--demos", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="behavior cloning on a dataset")
    common(sp, training=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="checkpoint of the best validated step")
    sp.add_argument("--metrics", help="CSV loss log (default: next to the checkpoint)")
    sp.add_argument("--last", help="also write the final-step checkpoint here")
    sp.add_argument("--resume", help="continue from this checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="success rate on held-out scenes")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--oracle", action="store_true", help="evaluate the scripted expert instead")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--out", help="JSON report path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("verify", help="numerical equivariance certification")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--quick", action="store_true", help="fewer random instances")
    sp.add_argument("--untie", action="store_true", help="debug: break weight tying (must fail)")
    sp.add_argument("--json", help="also write the results as JSON")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("export", help="write heatmaps for one scene")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene-seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    root = logging.getLogger("equitransporter")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if args.verbose else logging.WARNING)
    root.propagate = False
    try:
        return args.func(args)
    except UsageError as e:
        print(f"etp: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError, EOFError) as e:
        print(f"etp: io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
