"""Command-line entry point: ``repshot <subcommand> ...``.

Environment overrides: ``REPSHOT_OUTPUT_DIR`` (default output directory) and
``REPSHOT_NUM_THREADS`` (torch intra-op threads, default 1).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import io
from .classification import ClassifierConfig, classify, train_classifier
from .evolution import EvolutionHyperparams, predict_trajectory, train_cascade
from .graph_core import Population
from .harness import (
    StrategySpec,
    Strategy,
    kfold_split,
    run_classification_benchmark,
    run_regression_benchmark,
)
from .seeding import derive_seed
from .synthetic import SynthSpec, synth_population, synth_trajectories
from .templates import TemplateConfig, estimate_cbt, linear_average_template, random_one_shot_select

log = logging.getLogger("repshot")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# presets


def synthetic_preset(task: str, seed: int = 7, separation: float = 0.3) -> io.RunConfig:
    """Synthetic benchmark settings the package's defaults are tuned for."""
    if task == "classification":
        return io.RunConfig(
            task=task,
            synthetic=SynthSpec(num_subjects=40, r=8, class_separation=separation, noise_std=0.05, seed=seed),
            classifier=ClassifierConfig(learning_rate=5e-3, dropout_rate=0.0),
            seed=seed,
        )
    return io.RunConfig(
        task=task,
        synthetic=SynthSpec(num_subjects=40, r=8, noise_std=0.03, drift_magnitude=0.1, timepoints=3, seed=seed),
        evolution=EvolutionHyperparams(gen_lr_final=0.001),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# benchmark driver


def load_dataset(cfg: io.RunConfig):
    if cfg.synthetic is not None:
        if cfg.task == "classification":
            return synth_population(cfg.synthetic)
        return synth_trajectories(cfg.synthetic)
    data = io.load_manifest(cfg.manifest, normalize=cfg.normalize)
    if cfg.task == "classification" and not isinstance(data, Population):
        raise CliError(f"{cfg.manifest}: classification needs a single-timepoint manifest")
    if cfg.task == "regression" and isinstance(data, Population):
        raise CliError(f"{cfg.manifest}: regression needs a manifest with several timepoints")
    return data


def _strategy_specs(cfg: io.RunConfig) -> list[StrategySpec]:
    return [
        StrategySpec(s, cfg.random_repeats if Strategy(s) is Strategy.RANDOM_ONE_SHOT else 1)
        for s in cfg.strategies
    ]


def resolve_positive_class(cfg: io.RunConfig, labels):
    """The configured positive class, else "AD" when present, else the last sorted label."""
    if cfg.positive_class is not None or not labels:
        return cfg.positive_class
    classes = sorted(set(labels), key=str)
    return "AD" if "AD" in classes else classes[-1]


def run_benchmark(cfg: io.RunConfig):
    """Run the configured benchmark; everything is determined by ``cfg``."""
    data = load_dataset(cfg)
    specs = _strategy_specs(cfg)
    fold_seed = derive_seed(cfg.seed, "folds")
    if cfg.task == "classification":
        folds = kfold_split(len(data), data.labels, k=cfg.folds, seed=fold_seed)
        report = run_classification_benchmark(
            data, specs, cfg.classifier, folds, cfg.template, resolve_positive_class(cfg, data.labels), seed=cfg.seed
        )
    else:
        folds = kfold_split(len(data), k=cfg.folds, seed=fold_seed)
        report = run_regression_benchmark(data, specs, cfg.evolution, folds, cfg.template, seed=cfg.seed)
    # where the run is written does not affect its result
    config = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    report.meta = {"config": config, "num_samples": len(data)}
    return report


# ---------------------------------------------------------------------------
# subcommands


def _out_dir(args) -> Path:
    return Path(getattr(args, "out_dir", None) or os.environ.get("REPSHOT_OUTPUT_DIR") or "results")


def _json_config(path, cls, **overrides):
    base = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise io.FileMissing(f"{p}: no such config")
        base = json.loads(p.read_text())
    base.update({k: v for k, v in overrides.items() if v is not None})
    return io._from_dict(cls, base)


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_subjects=args.num_subjects,
        r=args.rois,
        class_separation=args.separation,
        noise_std=args.noise,
        drift_magnitude=args.drift,
        timepoints=args.timepoints,
        seed=args.seed,
    )
    out = _out_dir(args)
    entries = []
    if args.task == "classification":
        pop = synth_population(spec)
        for i, (m, label) in enumerate(zip(pop.members, pop.labels)):
            name = f"sub-{i:03d}.txt"
            io.write_matrix(out / name, m)
            entries.append({"path": name, "subject_id": f"sub-{i:03d}", "label": label})
    else:
        for traj in synth_trajectories(spec):
            for t, m in enumerate(traj.states):
                name = f"{traj.subject_id}_t{t}.txt"
                io.write_matrix(out / name, m)
                entries.append({"path": name, "subject_id": traj.subject_id, "timepoint": t})
    manifest = io.write_manifest(out / "manifest.csv", entries)
    print(manifest)
    return 0


def _population_from(args) -> Population:
    data = io.load_manifest(args.manifest, normalize=not args.no_normalize)
    if not isinstance(data, Population):
        t = args.timepoint if args.timepoint is not None else 0
        data = Population([traj.states[t] for traj in data])
    if args.label is not None:
        data = data.of_class(io._parse_label(args.label))
    return data


def cmd_estimate_cbt(args) -> int:
    pop = _population_from(args)
    cfg = _json_config(args.config, TemplateConfig, rng_seed=args.seed)
    template = estimate_cbt(pop, cfg)
    path = io.write_template(args.out, template, pop, cfg, args.seed, {"manifest": str(args.manifest)})
    print(path)
    return 0


def _training_input(data, strategy: str, template_cfg: TemplateConfig, seed: int, classes=None):
    """Trajectories (regression) or a Population / class-template dict (classification)."""
    s = Strategy(strategy)
    if isinstance(data, Population):
        if s is Strategy.TRAIN_ON_ALL:
            return data
        pick = {}
        for c in classes:
            members = data.of_class(c)
            if s is Strategy.RANDOM_ONE_SHOT:
                pick[c] = members.members[random_one_shot_select(len(members), derive_seed(seed, "random", str(c)))]
            elif s is Strategy.LINEAR_AVERAGE_ONE_SHOT:
                pick[c] = linear_average_template(members)
            else:
                pick[c] = estimate_cbt(members, replace(template_cfg, rng_seed=derive_seed(seed, "cbt", str(c))))
        return pick
    from .harness import average_trajectory, cbt_trajectory

    idx = list(range(len(data)))
    if s is Strategy.TRAIN_ON_ALL:
        return data
    if s is Strategy.RANDOM_ONE_SHOT:
        return [data[random_one_shot_select(len(data), derive_seed(seed, "random"))]]
    if s is Strategy.LINEAR_AVERAGE_ONE_SHOT:
        return [average_trajectory(data, idx)]
    return [cbt_trajectory(data, idx, template_cfg, derive_seed(seed, "cbt"))]


def cmd_train_evolution(args) -> int:
    data, scale = io.load_manifest_with_scaling(args.manifest, normalize=not args.no_normalize)
    if isinstance(data, Population):
        raise CliError(f"{args.manifest}: training a cascade needs several timepoints per subject")
    hp = _json_config(args.config, EvolutionHyperparams, rng_seed=derive_seed(args.seed, "cascade"), epochs=args.epochs)
    train = _training_input(data, args.strategy, TemplateConfig(), args.seed)
    model = train_cascade(train, hp)
    path = io.save_checkpoint(
        args.out, model, hp.to_dict(), io.manifest_hash(args.manifest), {"scaling": scale.to_dict(), "strategy": args.strategy}
    )
    print(path)
    return 0


def _input_scaling(header) -> io.Scaling:
    s = header.get("extra", {}).get("scaling")
    return io.Scaling(s["low"], s["high"]) if s else io.IDENTITY_SCALING


def cmd_predict(args) -> int:
    model, header = io.load_checkpoint(args.checkpoint)
    if header["kind"] != io.KIND_CASCADE:
        raise CliError(f"{args.checkpoint}: expected a cascade checkpoint, found {header['kind']}")
    baseline = _input_scaling(header).apply(io.read_matrix(args.baseline)) if not args.raw else io.read_matrix(args.baseline)
    out = Path(args.out_dir) if args.out_dir else Path(args.baseline).parent
    stem = Path(args.baseline).stem
    for t, m in enumerate(predict_trajectory(model, baseline), start=1):
        print(io.write_matrix(out / f"{stem}_t{t}.txt", m))
    return 0


def cmd_train_classifier(args) -> int:
    pop, scale = io.load_manifest_with_scaling(args.manifest, normalize=not args.no_normalize)
    if not isinstance(pop, Population) or pop.labels is None:
        raise CliError(f"{args.manifest}: training a classifier needs a labelled single-timepoint manifest")
    cfg = _json_config(args.config, ClassifierConfig, rng_seed=derive_seed(args.seed, "classifier"), epochs=args.epochs)
    classes = tuple(sorted(set(pop.labels), key=str))
    train = _training_input(pop, args.strategy, TemplateConfig(), args.seed, classes)
    model = train_classifier(train, cfg, classes=classes)
    path = io.save_checkpoint(
        args.out, model, cfg.to_dict(), io.manifest_hash(args.manifest), {"scaling": scale.to_dict(), "strategy": args.strategy}
    )
    print(path)
    return 0


def cmd_classify(args) -> int:
    model, header = io.load_checkpoint(args.checkpoint)
    if header["kind"] != io.KIND_CLASSIFIER:
        raise CliError(f"{args.checkpoint}: expected a classifier checkpoint, found {header['kind']}")
    g = io.read_matrix(args.graph)
    if not args.raw:
        g = _input_scaling(header).apply(g)
    label, probs = classify(model, g, args.threshold)
    print(json.dumps({"label": label, "probabilities": dict(zip(map(str, model.classes), probs))}))
    return 0


def cmd_benchmark(args) -> int:
    if args.config:
        cfg = io.load_config(args.config)
    elif args.synthetic:
        cfg = synthetic_preset(args.task, args.seed if args.seed is not None else 7)
    elif args.manifest:
        cfg = io.RunConfig(task=args.task, manifest=str(args.manifest))
    else:
        raise CliError("benchmark needs --config, --synthetic or --manifest")
    if args.task and args.task != cfg.task:
        raise CliError(f"--task {args.task} contradicts config task {cfg.task}")
    overrides = {}
    if args.strategies:
        overrides["strategies"] = [s.kind.value for s in _parse(args.strategies)]
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir or os.environ.get("REPSHOT_OUTPUT_DIR"):
        overrides["output_dir"] = str(_out_dir(args))
    cfg = replace(cfg, **overrides)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    # persist first, so the run can be repeated from this file alone
    io.save_config(out / "run_config.json", cfg)
    report = run_benchmark(cfg)
    paths = list(io.save_report(report, out))
    if args.plots:
        from .plots import save_plots

        paths += save_plots(report, out)
    for p in paths:
        print(p)
    return 0


def _parse(text):
    from .harness import parse_strategies

    try:
        return parse_strategies(text)
    except ValueError as exc:
        raise CliError(f"bad --strategies: {exc}") from None


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repshot", description="Representative one-shot learning on brain graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    s.add_argument("--task", choices=io.TASKS, default="classification")
    s.add_argument("--num-subjects", type=int, default=40)
    s.add_argument("--rois", type=int, default=8)
    s.add_argument("--separation", type=float, default=0.3)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--drift", type=float, default=0.1)
    s.add_argument("--timepoints", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_synth)

    def manifest_args(q):
        q.add_argument("--manifest", required=True)
        q.add_argument("--no-normalize", action="store_true", help="skip min-max scaling at ingestion")
        q.add_argument("--config", help="JSON file with the component's config fields")
        q.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("estimate-cbt", help="estimate a population template")
    manifest_args(s)
    s.add_argument("--label", help="restrict to one class")
    s.add_argument("--timepoint", type=int, help="timepoint to use from a longitudinal manifest (default 0)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate_cbt)

    strategies = [x.value for x in Strategy]
    s = sub.add_parser("train-evolution", help="train a graph-evolution cascade")
    manifest_args(s)
    s.add_argument("--strategy", choices=strategies, default="cbt")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_evolution)

    s = sub.add_parser("predict", help="predict follow-ups from a baseline matrix")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--raw", action="store_true", help="do not apply the training data's scaling")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("train-classifier", help="train a graph classifier")
    manifest_args(s)
    s.add_argument("--strategy", choices=strategies, default="cbt")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("classify", help="classify one matrix")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--graph", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--raw", action="store_true", help="do not apply the training data's scaling")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("benchmark", help="cross-validated strategy comparison")
    s.add_argument("--task", choices=io.TASKS)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="use the built-in synthetic preset for --task")
    src.add_argument("--manifest")
    src.add_argument("--config")
    s.add_argument("--strategies", help="comma list of all,cbt,avg,random")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--plots", action="store_true", help="also write PNG figures")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "benchmark" and not args.config and not args.task:
        parser.error("benchmark needs --task unless --config is given")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        torch.set_num_threads(int(os.environ.get("REPSHOT_NUM_THREADS", "1")))
        return args.func(args)
    except (CliError, ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"repshot {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
