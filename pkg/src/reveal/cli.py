"""Command-line entry point: ``reveal <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .align.model import AlignmentModel
from .align.train import AlignData, train
from .cohort import CohortSplits, generate_cohort, prevalence_of, select, split_cohort
from .config import load_config
from .csvio import load_cohort_csv, save_cohort_csv
from .errors import ConfigError, ParseError, RevealError, SchemaError
from .experiments import KINDS, TASKS, _train_config, base_arm, evaluate_checkpoint, run_experiment, task_cohort_config
from .manifest import RunManifest, atomic_write, file_digest
from .narrative import render_cohort, write_reports_jsonl

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, config=True, out=True):
    if config:
        p.add_argument("--config", type=Path, help="JSON config file (sections cohort/train/split/svm/experiment)")
        p.add_argument("--seed", type=int, help="base seed")
    if out:
        p.add_argument("--out", type=Path, required=True, help="output directory")


def _model_flags(p):
    p.add_argument("--loss", choices=("gacl", "infonce"))
    p.add_argument("--combiner", choices=("or", "and"))
    p.add_argument("--similarity-source", choices=("morphometry", "latent"))
    p.add_argument("--variant", choices=("joint", "image_only", "text_only", "image_plus_table"))


def _experiment_flags(p, kind=False):
    _common(p)
    _model_flags(p)
    p.add_argument("--task", choices=TASKS, action="append", help="repeat for several tasks (default ad)")
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--cohort", type=Path, help="use this cohort CSV instead of generating one")
    if kind:
        p.add_argument("--kind", choices=KINDS, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reveal", description="Group-aware contrastive alignment and downstream evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-cohort", help="generate a synthetic cohort CSV")
    _common(p)
    p.add_argument("--task", choices=TASKS, default="ad")

    p = sub.add_parser("render-reports", help="render clinical narratives for a cohort")
    p.add_argument("--cohort", type=Path, required=True)
    _common(p, config=False)

    p = sub.add_parser("train-align", help="train the projection heads on a cohort")
    p.add_argument("--cohort", type=Path, required=True)
    _common(p)
    _model_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint, or run an experiment kind")
    _experiment_flags(p)
    p.add_argument("--checkpoint", type=Path, help="checkpoint from train-align (needs --cohort)")
    p.add_argument("--splits", type=Path, help="splits.json (default: next to the checkpoint)")
    p.add_argument("--kind", choices=KINDS, default="main")

    for name, help_ in (
        ("sweep-thresholds", "vary one threshold at a time around the optimum"),
        ("ablate-similarity", "latent vs morphometric image similarity"),
        ("ablate-combiner", "OR vs AND label combiner"),
    ):
        _experiment_flags(sub.add_parser(name, help=help_))
    _experiment_flags(sub.add_parser("experiment", help="run any experiment kind"), kind=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path)
    _common(p, config=False)
    return parser


COMMAND_KIND = {
    "sweep-thresholds": "threshold_sweep",
    "ablate-similarity": "ablate_similarity_source",
    "ablate-combiner": "ablate_combiner",
}


def _overrides(args, command) -> dict:
    over: dict = {}
    if getattr(args, "seed", None) is not None:
        key = ("cohort", "seed") if command == "gen-cohort" else ("experiment", "seed")
        over.setdefault(key[0], {})[key[1]] = args.seed
    flags = {"loss": "loss", "combiner": "combiner", "similarity_source": "image_similarity_source"}
    for flag, field_ in flags.items():
        if getattr(args, flag, None) is not None:
            over.setdefault("train", {})[field_] = getattr(args, flag)
    if getattr(args, "variant", None) is not None:
        over.setdefault("experiment", {})["variant"] = args.variant
    if getattr(args, "n_seeds", None) is not None:
        over.setdefault("experiment", {})["n_seeds"] = args.n_seeds
    return over


def _load_cohort(path: Path, manifest: RunManifest):
    if not path.is_file():
        raise FileNotFoundError(f"cohort file not found: {path}")
    manifest.add_input(path)
    return load_cohort_csv(path)


def _write(out: Path, name: str, data, manifest: RunManifest):
    path = out / name
    atomic_write(path, data)
    manifest.add_output(path)
    return path


def _write_png(out: Path, name: str, draw, manifest: RunManifest):
    path = out / name
    draw(path)
    manifest.add_output(path)


def cmd_gen_cohort(args, cfg, manifest):
    ccfg = task_cohort_config(cfg, args.task)
    subjects = generate_cohort(ccfg)
    path = args.out / "cohort.csv"
    save_cohort_csv(subjects, path)
    manifest.add_output(path)
    manifest.seeds = [ccfg.seed]
    _write(args.out, "cohort_config.json", json.dumps({"cohort": ccfg.to_dict()}, indent=2, sort_keys=True) + "\n", manifest)
    print(f"wrote {len(subjects)} subjects ({sum(s.is_case for s in subjects)} cases, "
          f"prevalence {prevalence_of(subjects):.3f}) to {path}")


def cmd_render_reports(args, cfg, manifest):
    subjects = _load_cohort(args.cohort, manifest)
    reports = render_cohort(subjects)
    path = args.out / "reports.jsonl"
    write_reports_jsonl(reports, path)
    manifest.add_output(path)
    print(f"wrote {len(reports)} reports to {path}")


def cmd_train_align(args, cfg, manifest):
    from .plotting import plot_train_log

    subjects = _load_cohort(args.cohort, manifest)
    seed = cfg.seed
    manifest.seeds = [seed]
    sp = split_cohort(subjects, seed=seed, **asdict(cfg.split))
    t = cfg.train
    tr = AlignData.from_subjects(select(subjects, sp.align_train), t.text_dim, t.hash_seed)
    va = AlignData.from_subjects(select(subjects, sp.align_val), t.text_dim, t.hash_seed)
    tc = _train_config(cfg, base_arm(cfg), seed, tr)
    manifest.tic("train")
    model, log = train(tr, va if len(va) >= 2 else None, tc)
    manifest.toc("train")
    ckpt = args.out / "checkpoint.json"
    model.save(ckpt)
    manifest.add_output(ckpt)
    _write(args.out, "train_log.csv", log.to_csv(), manifest)
    _write(args.out, "splits.json", json.dumps(sp.to_dict(), indent=2) + "\n", manifest)
    summary = {"train_config": tc.to_dict(), "thresholds": log.thresholds, "final": log.rows[-1]}
    _write(args.out, "train_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", manifest)
    _write_png(args.out, "train_log.png", lambda p: plot_train_log(log, p), manifest)
    last = log.rows[-1]
    print(f"trained {tc.loss}/{tc.combiner}/{tc.image_similarity_source}: "
          f"train loss {log.rows[0]['train_loss']:.4f} -> {last['train_loss']:.4f}; checkpoint {ckpt}")


def _emit_report(report, out: Path, manifest: RunManifest):
    from .plotting import plot_report

    stem = report.kind
    _write(out, f"{stem}.csv", report.rows_csv(), manifest)
    if report.stats:
        _write(out, f"{stem}_stats.csv", report.stats_csv(), manifest)
    _write(out, f"{stem}.json", report.to_json(), manifest)
    text = report.to_text()
    _write(out, f"{stem}.txt", text, manifest)
    _write(out, f"{stem}_per_seed.csv", report.per_seed_csv(), manifest)
    _write(out, f"{stem}_predictions.csv", report.predictions_csv(), manifest)
    _write_png(out, f"{stem}.png", lambda p: plot_report(report, p), manifest)
    print(text)


def cmd_experiment(args, cfg, manifest, kind):
    tasks = tuple(args.task or ("ad",))
    subjects = _load_cohort(args.cohort, manifest) if args.cohort is not None else None
    manifest.seeds = cfg.seeds
    manifest.tic("experiment")
    report = run_experiment(cfg, kind, tasks, subjects=subjects)
    manifest.toc("experiment")
    _emit_report(report, args.out, manifest)


def cmd_evaluate(args, cfg, manifest):
    if args.checkpoint is None:
        return cmd_experiment(args, cfg, manifest, args.kind)
    if args.cohort is None:
        raise ConfigError("--checkpoint needs --cohort")
    if not args.checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    manifest.add_input(args.checkpoint)
    model = AlignmentModel.load(args.checkpoint)
    subjects = _load_cohort(args.cohort, manifest)
    splits_path = args.splits or args.checkpoint.parent / "splits.json"
    if splits_path.is_file():
        manifest.add_input(splits_path)
        splits = CohortSplits.from_dict(json.loads(splits_path.read_text(encoding="utf-8")))
    else:
        splits = split_cohort(subjects, seed=int(model.config.get("seed", cfg.seed)), **asdict(cfg.split))
    task = (args.task or ["ad"])[0]
    manifest.seeds = cfg.seeds
    report = evaluate_checkpoint(cfg, model, subjects, splits, cfg.variant, task, label=f"checkpoint ({cfg.variant})")
    _emit_report(report, args.out, manifest)


def cmd_replay(args):
    recorded = RunManifest.load(args.manifest)
    for path, digest in recorded["inputs"].items():
        if not Path(path).is_file() or file_digest(path) != digest:
            raise ConfigError(f"input {path} is missing or changed since the recorded run")
    args.out.mkdir(parents=True, exist_ok=True)
    cfg_path = args.out / "replay_config.json"
    atomic_write(cfg_path, json.dumps(recorded["config"], indent=2, sort_keys=True) + "\n")
    argv = list(recorded["argv"])
    cleaned = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--config", "--out"):
            skip = True
            continue
        if tok.startswith(("--config=", "--out=")):
            continue
        cleaned.append(tok)
    return run(cleaned + ["--config", str(cfg_path), "--out", str(args.out)], env={})


def run(argv, env=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"reveal: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "replay":
            return cmd_replay(args)
        cfg = load_config(getattr(args, "config", None), env, _overrides(args, args.command))
        args.out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, list(argv), cfg.to_dict())
        if args.command == "gen-cohort":
            cmd_gen_cohort(args, cfg, manifest)
        elif args.command == "render-reports":
            cmd_render_reports(args, cfg, manifest)
        elif args.command == "train-align":
            cmd_train_align(args, cfg, manifest)
        elif args.command == "evaluate":
            cmd_evaluate(args, cfg, manifest)
        elif args.command == "experiment":
            cmd_experiment(args, cfg, manifest, args.kind)
        else:
            cmd_experiment(args, cfg, manifest, COMMAND_KIND[args.command])
        manifest.write(args.out / "manifest.json")
    except (ConfigError, SchemaError, ParseError, FileNotFoundError) as err:
        print(f"reveal: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (RevealError, ValueError, ArithmeticError, OSError) as err:
        print(f"reveal: failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
