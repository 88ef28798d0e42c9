"""``hwcl`` command line.

Exit codes: 0 success, 1 validation error (bad arguments, config or input
files), 2 numerical failure (non-finite gradient during training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..analysis import classify_negatives, default_bin_edges, gap_report, histogram
from ..embedding import EmbeddingBatch, cosine_matrix
from ..encoder import TrainConfig, save_checkpoint
from ..errors import NumericalError, ValidationError
from ..gradcheck import ENCODER_TOLERANCE, LOSS_TOLERANCE, run_grad_check
from .data import SyntheticSpec, generate_splits, load_dataset, save_dataset
from .experiment import SWEEPABLE, run_configs, sweep_configs, train_and_evaluate
from .report import aggregate_runs, emit_report, write_summary

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse's default usage-error status (2) is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read JSON from {path}: {exc}") from exc


def _csv_numbers(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad value list {text!r}") from exc


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec.from_dict(_read_json(args.spec))
    train_set, heldout = generate_splits(spec)
    save_dataset(args.out, train_set, heldout, spec)
    print(f"wrote {len(train_set)} training and {len(heldout)} held-out pairs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = TrainConfig.from_dict(_read_json(args.config))
    train_set, heldout, spec = load_dataset(args.data)
    out = Path(args.out)
    state, result = train_and_evaluate(spec, config, (train_set, heldout))
    trace, report = result.loss_trace, result.report
    emit_report([result], out)
    save_checkpoint(out / "checkpoint.json", state, config)
    first = f"{trace[0]:.6f}" if trace else "n/a"
    last = f"{trace[-1]:.6f}" if trace else "n/a"
    print(f"{result.name}: loss {first} -> {last}, held-out P@1 {report.precision_at_1:.4f}, hard gap {report.hard_gap:+.4f}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    summary = run_grad_check(args.seed, args.instances)
    print(f"loss gradients (rewards frozen): max rel err {summary.loss_frozen:.3e}  (< {LOSS_TOLERANCE:g})")
    print(f"loss gradients (rewards recomputed): min rel err {summary.loss_recomputed_min:.3e}  (> {10 * LOSS_TOLERANCE:g})")
    print(f"encoder parameter gradients: max rel err {summary.encoder:.3e}  (< {ENCODER_TOLERANCE:g})")
    print("PASS" if summary.passed else "FAIL")
    return EXIT_OK if summary.passed else EXIT_NUMERICAL


def _load_embeddings(path):
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
        else:
            with np.load(path, allow_pickle=False) as z:
                doc = {k: z[k] for k in z.files}
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read embeddings from {path}: {exc}") from exc
    missing = {"queries", "targets"} - set(doc)
    if missing:
        raise ValidationError(f"{path}: missing arrays {sorted(missing)}")
    return EmbeddingBatch(doc["queries"], doc["targets"], doc.get("positive_index"))


def cmd_analyze(args) -> int:
    batch = _load_embeddings(args.embeddings)
    sim = cosine_matrix(batch)
    negatives = classify_negatives(sim, batch.positive_index, args.k)
    report = gap_report(sim, batch.positive_index, args.k, negatives=negatives)
    hist = histogram(sim, batch.positive_index, negatives, default_bin_edges(args.bins))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gap_report.json").write_text(report.to_json() + "\n")
    (out / "histogram.json").write_text(hist.to_json() + "\n")
    print(
        f"positive {report.mean_positive:.4f}  hard {report.mean_hard_negative:.4f} ({report.hard_gap:+.4f})  "
        f"easy {report.mean_easy_negative:.4f} ({report.easy_gap:+.4f})  P@1 {report.precision_at_1:.4f}"
    )
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    for name, v in summary["variants"].items():
        print(f"{name:>32}  P@1 {v['precision_at_1']:.4f}  hard gap {v['hard_gap']:+.4f}  runs {v['n_runs']}")


def cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise ValidationError(f"--param must be one of {SWEEPABLE}")
    spec = SyntheticSpec.from_dict(_read_json(args.spec))
    base = TrainConfig.from_dict(_read_json(args.config))
    values = _csv_numbers(args.values)
    seeds = [int(s) for s in _csv_numbers(args.seeds)]
    out = Path(args.out)
    for seed in seeds:
        configs = sweep_configs(replace(base, seed=seed), args.param, values)
        results = run_configs(replace(spec, seed=seed), configs)
        emit_report(results, out / f"seed_{seed}")
    summary = aggregate_runs(out)
    write_summary(summary, out)
    _print_summary(summary)
    return EXIT_OK


def cmd_report(args) -> int:
    summary = aggregate_runs(args.runs)
    write_summary(summary, args.out or args.runs)
    _print_summary(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hwcl", description="Hardness-weighted contrastive learning at desk scale")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a seeded synthetic dataset (.npz)")
    g.add_argument("--spec", help="SyntheticSpec JSON (defaults used when omitted)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model and write checkpoint + reports")
    t.add_argument("--config", help="TrainConfig JSON (defaults used when omitted)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("grad-check", help="finite-difference checks of every analytic gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--instances", type=int, default=20)
    c.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("analyze", help="similarity-gap report for a saved embedding batch")
    a.add_argument("--embeddings", required=True, help=".npz or .json with queries, targets[, positive_index]")
    a.add_argument("--k", type=int, default=5)
    a.add_argument("--bins", type=int, default=40)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="train across values of one parameter and seeds")
    s.add_argument("--param", required=True, choices=SWEEPABLE)
    s.add_argument("--values", required=True, help="comma-separated, e.g. 0,3,6,9,12")
    s.add_argument("--seeds", default="0,1,2,3,4")
    s.add_argument("--spec")
    s.add_argument("--config")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="aggregate metrics.json files under a directory")
    r.add_argument("--runs", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
