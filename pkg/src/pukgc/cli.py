"""Command-line entry point: train, evaluate, ablate, sweep-prior, gradcheck, make-toy.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 non-finite loss, 4 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, gradcheck
from .checkpoint import CheckpointError
from .evaluation import HITS_AT, evaluate
from .kg import SPLITS, DataError, load_dir
from .risk import MODES
from .synthetic import planted_graph
from .trainer import ConfigError, NonFiniteLoss, TrainConfig, config_dict, train

logger = logging.getLogger("pukgc")

EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE, EXIT_GRADCHECK = 1, 2, 3, 4
DEFAULT_PRIORS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)

# flag name -> TrainConfig field
CONFIG_FLAGS = {f.name.replace("_", "-"): f.name for f in fields(TrainConfig)}
PATH_KEYS = ("data", "negatives")


def _coerce(key: str, raw, kind: type):
    try:
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}") from None


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_FLAGS and key not in PATH_KEYS:
            raise ConfigError(key, f"unknown key in {path}:{n}")
        out[key] = value
    return out


def resolve(args: argparse.Namespace) -> tuple[TrainConfig, dict[str, str | None]]:
    """Flags override the config file, which overrides the defaults."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    types = {f.name: type(f.default) for f in fields(TrainConfig)}
    values = {}
    for flag, name in CONFIG_FLAGS.items():
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
        elif flag in from_file:
            values[name] = _coerce(flag, from_file[flag], types[name])
    cfg = TrainConfig(**values).validate()
    paths = {k: getattr(args, k, None) or from_file.get(k) for k in PATH_KEYS}
    return cfg, paths


def fingerprint(paths: list[Path]) -> dict:
    out = {}
    for p in paths:
        if not p.is_file():
            raise DataError(f"missing data file {p}")
        out[p.name] = {"bytes": p.stat().st_size, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
    return out


def _data_files(data: str | None, negatives: str | None) -> list[Path]:
    if not data:
        raise ConfigError("data", "a dataset directory is required (--data)")
    files = [Path(data) / f"{s}.txt" for s in SPLITS]
    if negatives:
        files.append(Path(negatives))
    return files


def prepare_out(out: str | Path | None, force: bool) -> Path:
    if not out:
        raise ConfigError("out", "an output directory is required (--out)")
    out = Path(out)
    manifest = out / "manifest.json"
    if manifest.is_file() and not force:
        try:
            status = json.loads(manifest.read_text()).get("status")
        except json.JSONDecodeError:
            status = None
        if status == "completed":
            raise ConfigError("out", f"{out} holds a completed run; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: TrainConfig | None, data: dict | None,
                   status: str = "started", **extra) -> dict:
    manifest = {"tool": "pukgc", "version": __version__, "command": command, "status": status,
                "seed": None if cfg is None else cfg.seed,
                "config": None if cfg is None else config_dict(cfg), "data": data}
    manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _report_dict(report) -> dict:
    return {"mrr": report.mrr, **{f"hits{k}": report.hits_at[k] for k in HITS_AT}}


def run_training(cfg: TrainConfig, data: str, negatives: str | None, out: str | Path,
                 force: bool = False, command: str = "train") -> dict:
    """One complete training run into ``out``; returns the test metrics."""
    out = prepare_out(out, force)
    files = _data_files(data, negatives)
    prints = fingerprint(files)
    write_manifest(out, command, cfg, prints)
    g, report = load_dir(data, negatives)
    logger.info(json.dumps(report.as_record()))
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as metrics:
        try:
            result = train(g, cfg, metrics=metrics, checkpoint_path=out / "checkpoint.bin")
        except NonFiniteLoss as exc:
            (out / "nonfinite_dump.json").write_text(json.dumps(exc.dump))
            write_manifest(out, command, cfg, prints, status="failed", error=str(exc))
            raise
    test = _report_dict(evaluate(result.params, g, "test")) if len(g.test) else None
    summary = {"best_epoch": result.best_epoch, "best_valid_mrr": result.best_valid_mrr,
               "epochs_run": len(result.history), "test": test}
    (out / "eval.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, command, cfg, prints, status="completed", result=summary)
    return summary


def _job(payload):
    cfg, data, negatives, out, parent = payload
    try:
        return run_training(cfg, data, negatives, out, force=True, command=f"{parent}-run")
    except (ConfigError, DataError, NonFiniteLoss) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _run_jobs(jobs: list, workers: int) -> list[dict]:
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def _seeds(text: str | None, default: int) -> list[int]:
    if not text:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError("seeds", f"expected comma-separated integers, got {text!r}") from None


def _aggregate(results: list[dict]) -> dict:
    ok = [r["test"] for r in results if "error" not in r and r.get("test")]
    errors = [r["error"] for r in results if "error" in r]
    row = {"seeds_ok": len(ok), "errors": errors}
    for key in ("mrr",) + tuple(f"hits{k}" for k in HITS_AT):
        row[key] = float(np.median([t[key] for t in ok])) if ok else None
    mrrs = [t["mrr"] for t in ok]
    row["per_seed_mrr"] = mrrs
    row["iqr"] = float(np.subtract(*np.percentile(mrrs, [75, 25]))) if mrrs else None
    return row


def ablation_table(rows: list[dict]) -> str:
    head = f"{'mode':<8}{'MRR':>8}{'H@1':>8}{'H@3':>8}{'H@10':>8}{'IQR':>8}  note"
    lines = [head]
    for r in rows:
        cells = "".join(f"{r[k]:>8.4f}" if r[k] is not None else f"{'-':>8}"
                        for k in ("mrr", "hits1", "hits3", "hits10", "iqr"))
        note = "; ".join(r["errors"]) if r["errors"] else ""
        lines.append(f"{r['mode'].upper():<8}{cells}  {note}".rstrip())
    return "\n".join(lines) + "\n"


def run_ablation(cfg: TrainConfig, data: str, negatives: str | None, out: str | Path,
                 seeds: list[int], modes=MODES, workers: int = 1, force: bool = False) -> list[dict]:
    from .plotting import ablation_figure

    out = prepare_out(out, force)
    prints = fingerprint(_data_files(data, negatives))
    write_manifest(out, "ablate", cfg, prints, seeds=seeds, modes=list(modes))
    jobs = [(replace(cfg, mode=m, seed=s), data, negatives, out / f"{m}-seed{s}", "ablate")
            for m in modes for s in seeds]
    results = _run_jobs(jobs, workers)
    rows = []
    for i, mode in enumerate(modes):
        row = {"mode": mode, **_aggregate(results[i * len(seeds):(i + 1) * len(seeds)])}
        rows.append(row)
    (out / "ablation.json").write_text(json.dumps({"seeds": seeds, "rows": rows}, indent=2) + "\n")
    (out / "ablation.txt").write_text(ablation_table(rows))
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "mrr", "hits1", "hits3", "hits10", "iqr", "seeds_ok"])
        for r in rows:
            writer.writerow([r["mode"]] + [_fmt(r[k]) for k in ("mrr", "hits1", "hits3", "hits10", "iqr")]
                            + [r["seeds_ok"]])
    ablation_figure(rows, out / "ablation.png")
    write_manifest(out, "ablate", cfg, prints, status="completed", seeds=seeds, modes=list(modes))
    return rows


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def run_sweep(cfg: TrainConfig, data: str, negatives: str | None, out: str | Path, seeds: list[int],
              priors=DEFAULT_PRIORS, workers: int = 1, force: bool = False) -> list[dict]:
    from .plotting import prior_figure

    out = prepare_out(out, force)
    prints = fingerprint(_data_files(data, negatives))
    write_manifest(out, "sweep-prior", cfg, prints, seeds=seeds, priors=list(priors))
    jobs = [(replace(cfg, pi_p=p, seed=s), data, negatives, out / f"pi{p:g}-seed{s}", "sweep-prior")
            for p in priors for s in seeds]
    results = _run_jobs(jobs, workers)
    rows = []
    for i, p in enumerate(priors):
        rows.append({"pi_p": p, **_aggregate(results[i * len(seeds):(i + 1) * len(seeds)])})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pi_p", "mrr", "hits1", "hits3", "hits10"])
    for r in rows:
        writer.writerow([f"{r['pi_p']:g}"] + [_fmt(r[k]) for k in ("mrr", "hits1", "hits3", "hits10")])
    (out / "sweep.csv").write_text(buf.getvalue())
    good = [r for r in rows if r["mrr"] is not None]
    if good:
        prior_figure([r["pi_p"] for r in good], [r["mrr"] for r in good], out / "sweep.png", cfg.mode)
    write_manifest(out, "sweep-prior", cfg, prints, status="completed", seeds=seeds,
                   priors=list(priors))
    return rows


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="directory holding train.txt, valid.txt and test.txt")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="flat key = value file; keys match the flag names")
    p.add_argument("--negatives", help="annotated true negatives (TSV), used by pn+ and puda+")
    p.add_argument("--force", action="store_true", help="overwrite a completed run")
    p.add_argument("--mode", dest="mode")
    p.add_argument("--scoring", choices=["distmult", "transe"])
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-unlabeled", dest="n_unlabeled", type=int)
    p.add_argument("--m-synthetic", dest="m_synthetic", type=int)
    p.add_argument("--pi-p", dest="pi_p", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--lr-d", dest="lr_d", type=float)
    p.add_argument("--lr-g", dest="lr_g", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--clamp-policy", dest="clamp_policy", choices=["defensive", "zero"])
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--head-tail-ratio", dest="head_tail_ratio", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--g-steps", dest="g_steps", type=int)
    p.add_argument("--negative-fraction", dest="negative_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pukgc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pukgc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_train_flags(p)

    p = sub.add_parser("evaluate", help="filtered MRR/Hits@K of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--side", choices=["head", "tail", "both"], default="both")
    p.add_argument("--raw", action="store_true", help="disable filtering")
    p.add_argument("--out", help="write the report as JSON here")

    for name, helptext in (("ablate", "all five modes on one config"),
                           ("sweep-prior", "grid over the class prior")):
        p = sub.add_parser(name, help=helptext)
        _add_train_flags(p)
        p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
        p.add_argument("--workers", type=int, default=1)
        if name == "sweep-prior":
            p.add_argument("--priors", help="comma-separated priors (default 1e-1 ... 1e-7)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional directory for manifest.json and gradcheck.json")
    p.add_argument("--inject-fault", choices=gradcheck.FAULTS, help=argparse.SUPPRESS)

    p = sub.add_parser("make-toy", help="write a planted-pattern dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=300)
    p.add_argument("--bits", type=int, default=4)
    p.add_argument("--observed", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_train(args) -> int:
    cfg, paths = resolve(args)
    summary = run_training(cfg, paths["data"], paths["negatives"], args.out, args.force)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    params, ents, rels, _ = checkpoint.load(args.checkpoint)
    g, _ = load_dir(args.data)
    if ents != g.entity_labels or rels != g.relation_labels:
        raise DataError("checkpoint vocabulary does not match the dataset")
    report = evaluate(params, g, args.split, args.side, filtered=not args.raw)
    print(report.to_text(args.split), end="")
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def cmd_ablate(args) -> int:
    cfg, paths = resolve(args)
    if args.workers < 1:
        raise ConfigError("workers", "must be at least 1")
    rows = run_ablation(cfg, paths["data"], paths["negatives"], args.out,
                        _seeds(args.seeds, cfg.seed), workers=args.workers, force=args.force)
    print(ablation_table(rows), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg, paths = resolve(args)
    if args.workers < 1:
        raise ConfigError("workers", "must be at least 1")
    priors = DEFAULT_PRIORS
    if args.priors:
        try:
            priors = tuple(float(p) for p in args.priors.split(","))
        except ValueError:
            raise ConfigError("priors", f"cannot parse {args.priors!r}") from None
    for p in priors:
        replace(cfg, pi_p=p).validate()
    run_sweep(cfg, paths["data"], paths["negatives"], args.out, _seeds(args.seeds, cfg.seed),
              priors, args.workers, args.force)
    print((Path(args.out) / "sweep.csv").read_text(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials", "must be at least 1")
    out = None
    if args.out:
        out = prepare_out(args.out, force=True)
        write_manifest(out, "gradcheck", None, None, trials=args.trials, seed=args.seed)
    results = gradcheck.run_all(args.trials, args.seed, args.inject_fault)
    for r in results:
        print(r.line())
    if out is not None:
        (out / "gradcheck.json").write_text(json.dumps(
            [{"suite": r.name, "max_rel_err": r.max_rel_err, "passed": r.passed, "worst": r.worst}
             for r in results], indent=2) + "\n")
        write_manifest(out, "gradcheck", None, None, status="completed", trials=args.trials,
                       seed=args.seed)
    return 0 if all(r.passed for r in results) else EXIT_GRADCHECK


def cmd_make_toy(args) -> int:
    toy = planted_graph(args.entities, args.bits, args.observed, seed=args.seed)
    out = toy.write(args.out)
    print(f"wrote {out}: train={len(toy.train)} valid={len(toy.valid)} test={len(toy.test)} "
          f"hidden={len(toy.hidden)}")
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "sweep-prior": cmd_sweep, "gradcheck": cmd_gradcheck, "make-toy": cmd_make_toy}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLoss as exc:
        print(f"non-finite loss: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
