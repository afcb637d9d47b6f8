"""Command-line entry points: generate, train, eval, baseline, simulate."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import torch
import yaml

from .baseline import EchoOracleClient, HTTPChatClient, PromptConfig, ScriptedClient, baseline_eval
from .dataset import ConfigInfeasible, SceneConfig, config_digest, generate_dataset, write_dataset
from .encoders import EncoderConfig, ExternalServiceError, make_encoder
from .estimator import GridPlanner
from .evaluation import OraclePlanner, closed_loop_predictions, evaluate, run_episode, stage_rows, write_report
from .graphs import ParseError, read_traces
from .network import ModelConfig
from .training import LossConfig, TrainConfig, train

log = logging.getLogger("gridplanner")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


@dataclass
class DatasetOptions:
    tasks: int = 200
    split: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything but the output directory."""
        d = self.as_dict()
        d.pop("out")
        return config_digest(d)


_SECTIONS = {f.name: f for f in fields(RunConfig)}


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {', '.join(unknown)}")
    if cls is SceneConfig and "rooms" in values:
        values = {**values, "rooms": tuple(values["rooms"])}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | None) -> RunConfig:
    """Read a YAML (or JSON) run config; missing sections take defaults."""
    raw: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path} must contain a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    cfg = RunConfig()
    for name, value in raw.items():
        current = getattr(cfg, name)
        if name in ("seed", "out"):
            setattr(cfg, name, value)
        else:
            setattr(cfg, name, _build(type(current), value, name))
    return cfg


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    seed = args.seed if args.seed is not None else cfg.seed
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg.seed = seed
    if args.out is not None:
        cfg.out = args.out
    try:
        scene = replace(cfg.scene, seed=seed)
        if getattr(args, "objects", None) is not None:
            scene = replace(scene, objects_per_scene=args.objects)
        if getattr(args, "combo_split", None) is not None:
            scene = replace(scene, combo_split=args.combo_split)
        cfg.scene = scene
        if getattr(args, "tasks", None) is not None:
            cfg.dataset = replace(cfg.dataset, tasks=args.tasks)
        tr = {"seed": seed}
        for flag, key in (("iterations", "iterations"), ("batch_size", "batch_size"), ("lr", "lr")):
            if getattr(args, flag, None) is not None:
                tr[key] = getattr(args, flag)
        cfg.train = replace(cfg.train, **tr)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.encoder.dim != cfg.model.dim:
        raise ConfigError(f"encoder.dim {cfg.encoder.dim} must equal model.dim {cfg.model.dim}")
    return cfg


def _dataset_file(path: str | None, default_split: str) -> str:
    if not path:
        raise ConfigError("--dataset is required")
    if os.path.isdir(path):
        for name in (f"{default_split}.jsonl", "all.jsonl"):
            cand = os.path.join(path, name)
            if os.path.exists(cand):
                return cand
        raise ConfigError(f"no {default_split}.jsonl or all.jsonl in {path}")
    if not os.path.exists(path):
        raise ConfigError(f"dataset not found: {path}")
    return path


def _load_traces(args, default_split: str):
    path = _dataset_file(args.dataset, args.split or default_split)
    try:
        traces = read_traces(path)
    except ParseError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not traces:
        raise ConfigError(f"{path} holds no traces")
    return traces


def _write_json(path: str, obj: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _planner(args, cfg: RunConfig, traces):
    if args.planner == "oracle":
        return OraclePlanner(traces)
    if args.planner == "grid":
        if not args.checkpoint or not os.path.exists(args.checkpoint):
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        return GridPlanner.load(args.checkpoint)
    raise ConfigError(f"planner {args.planner!r} is not a local planner")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, cfg: RunConfig) -> int:
    try:
        data = generate_dataset(cfg.scene, cfg.dataset.tasks)
    except ConfigInfeasible as exc:
        raise ConfigError(str(exc)) from exc
    paths = write_dataset(cfg.out, data, split=cfg.dataset.split)
    _write_json(os.path.join(cfg.out, "run.json"), {"command": "generate", "config": cfg.as_dict(), "config_digest": cfg.digest()})
    print(f"config digest {cfg.digest()}  dataset digest {data.digest()}  seed {cfg.seed}")
    print(data.stats.table())
    print(f"move:pick ratio {data.stats.move_pick_ratio():.3f}")
    for k, v in sorted(paths.items()):
        print(f"wrote {k}: {v}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    traces = _load_traces(args, "train")
    os.makedirs(cfg.out, exist_ok=True)
    checkpoint = args.checkpoint or os.path.join(cfg.out, "checkpoint.npz")
    metrics = os.path.join(cfg.out, "metrics.csv")
    if args.resume and not os.path.exists(checkpoint):
        raise ConfigError(f"cannot resume: {checkpoint} does not exist")
    encoder = make_encoder(cfg.encoder)
    dtype = torch.float64 if args.float64 else torch.float32
    t0 = time.perf_counter()
    result = train(
        traces,
        cfg.model,
        cfg.train,
        cfg.loss,
        encoder,
        checkpoint=checkpoint,
        resume=args.resume,
        metrics_csv=metrics,
        dtype=dtype,
        stop_after=args.stop_after,
        run_meta={"config_digest": cfg.digest(), "seed": cfg.seed},
    )
    last = result.history[-1] if result.history else {}
    _write_json(
        os.path.join(cfg.out, "run.json"),
        {"command": "train", "config": cfg.as_dict(), "config_digest": cfg.digest(), "iterations": result.iterations,
         "checkpoint": checkpoint, "metrics": metrics, "final": last, "seconds": time.perf_counter() - t0},
    )
    print(f"config digest {cfg.digest()}  seed {cfg.seed}")
    print(f"trained {result.iterations} iterations; final loss {last.get('loss', float('nan')):.4f}")
    print(f"checkpoint {checkpoint}\nmetrics {metrics}")
    return EXIT_OK


def _llm_client(args, traces, cfg: RunConfig):
    if args.client == "echo-oracle":
        return EchoOracleClient(traces, cfg.prompt.n_shots)
    if args.client == "finish":
        return ScriptedClient(["finish robot 0"])
    try:
        return HTTPChatClient()
    except ExternalServiceError as exc:
        raise ConfigError(str(exc)) from exc


def _run_baseline(args, cfg: RunConfig, traces, name: str) -> int:
    result = baseline_eval(_llm_client(args, traces, cfg), traces, cfg.prompt)
    paths = write_report(cfg.out, name, result.report, cfg.as_dict(), cfg.digest(), result.rows(traces))
    print(f"config digest {cfg.digest()}  seed {cfg.seed}")
    print(result.report.summary())
    print(f"failures {result.report.n_failures}")
    print(f"report {paths['json']}\nstages {paths['csv']}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    traces = _load_traces(args, "eval")
    if args.planner == "llm":
        return _run_baseline(args, cfg, traces, "eval")
    planner = _planner(args, cfg, traces)
    mode = "closed_loop" if args.closed_loop else "teacher_forced"
    report = evaluate(planner, traces, mode)
    if mode == "teacher_forced":
        preds = [planner.plan(t.instruction, r, s) for t in traces for s, r in t.stages]
    else:
        preds = [p for t in traces for p in closed_loop_predictions(planner, t)]
    conf = {**cfg.as_dict(), "planner": args.planner, "mode": mode, "checkpoint": args.checkpoint}
    paths = write_report(cfg.out, "eval", report, conf, cfg.digest(), stage_rows(traces, preds))
    print(f"config digest {cfg.digest()}  seed {cfg.seed}  mode {mode}")
    print(report.summary())
    print(f"report {paths['json']}\nstages {paths['csv']}")
    return EXIT_OK


def cmd_baseline(args, cfg: RunConfig) -> int:
    return _run_baseline(args, cfg, _load_traces(args, "eval"), "baseline")


def cmd_simulate(args, cfg: RunConfig) -> int:
    traces = _load_traces(args, "eval")
    if not 0 <= args.task < len(traces):
        raise ConfigError(f"--task must be in 0..{len(traces) - 1}")
    trace = traces[args.task]
    planner = _planner(args, cfg, traces)
    cap = args.max_steps if args.max_steps is not None else 2 * len(trace) + 2
    s0, r0 = trace.stages[0]
    print(f"config digest {cfg.digest()}  seed {cfg.seed}  task {trace.task_id}")
    print(f"instruction: {trace.instruction}")
    steps, finished = run_episode(planner, trace.instruction, s0, r0, cap)
    for st in steps:
        note = "applied" if st.applied else f"rejected ({st.reason})"
        print(f"stage {st.stage}: {st.prediction.action.text} {st.prediction.object_id} {note}")
    if finished:
        print(f"finished after {len(steps)} steps (ground truth {len(trace)})")
        return EXIT_OK
    print(f"step cap {cap} reached without finish", file=sys.stderr)
    return EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridplanner", description="Graph-based instruction planner toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML or JSON run config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="build a synthetic dataset")
    common(g)
    g.add_argument("--objects", type=int)
    g.add_argument("--tasks", type=int)
    g.add_argument("--combo-split", choices=("all", "train", "unseen"))

    def data_args(sp):
        sp.add_argument("--dataset", help="dataset directory or .jsonl file")
        sp.add_argument("--split", choices=("train", "eval", "all"))

    t = sub.add_parser("train", help="train the planner network")
    common(t)
    data_args(t)
    t.add_argument("--checkpoint")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--iterations", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--stop-after", type=int, help="stop early at this iteration (resumable)")
    t.add_argument("--float64", action="store_true")

    def planner_args(sp, choices):
        sp.add_argument("--planner", choices=choices, default=choices[0])
        sp.add_argument("--checkpoint")
        sp.add_argument("--client", choices=("http", "echo-oracle", "finish"), default="http")

    e = sub.add_parser("eval", help="score a planner on a dataset")
    common(e)
    data_args(e)
    planner_args(e, ("grid", "oracle", "llm"))
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--teacher-forced", dest="closed_loop", action="store_false")
    mode.add_argument("--closed-loop", dest="closed_loop", action="store_true")
    e.set_defaults(closed_loop=False)

    b = sub.add_parser("baseline", help="prompted language-model planner")
    common(b)
    data_args(b)
    b.add_argument("--client", choices=("http", "echo-oracle", "finish"), default="http")

    s = sub.add_parser("simulate", help="closed-loop rollout of one task")
    common(s)
    data_args(s)
    planner_args(s, ("grid", "oracle"))
    s.add_argument("--task", type=int, default=0, help="index of the task in the dataset file")
    s.add_argument("--max-steps", type=int)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
