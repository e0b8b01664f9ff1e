"""Command-line entry point.

Subcommands: train, sample, reconstruct, eval, latent-grid, selfcheck.
Every subcommand is deterministic given --seed, and all emitted files are
schema-stable (fixed CSV headers, fixed JSON keys) so downstream tooling
never parses free text.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical or
property failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import latent_grid, reconstruction_curve
from .chem import (ChemError, SmilesError, check_validity, compute_metrics,
                   load_smiles_file, load_valence_table, training_string_set,
                   write_smiles)
from .flow import GrfModel, ModelConfig, load_checkpoint, save_checkpoint, toy_config
from .graphs import GraphError, GraphSchema, pad_graph, unpad_graph
from .inversion import InversionConfig, generate
from .likelihood import LogDetEstimatorConfig, full_logp
from .linalg import NumericalError
from .selfcheck import format_report, run_selfcheck
from .training import TrainConfig, train, write_history_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="grf",
                     description="Invertible residual flows for molecular graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a SMILES dataset")
    p_train.add_argument("--config", type=Path, help="JSON with 'model' and 'train' sections")
    p_train.add_argument("--dataset", type=Path, required=True)
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--seed", type=int, default=0)

    p_sample = sub.add_parser("sample", help="generate molecules from a checkpoint")
    p_sample.add_argument("--ckpt", type=Path, required=True)
    p_sample.add_argument("--out", type=Path, required=True)
    p_sample.add_argument("--count", type=int, default=1000)
    p_sample.add_argument("--tx", type=float, default=0.65)
    p_sample.add_argument("--ta", type=float, default=0.69)
    p_sample.add_argument("--iterations", type=int, default=100)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--threads", type=int, default=1)
    p_sample.add_argument("--dataset", type=Path,
                          help="training SMILES for the novelty metric")
    p_sample.add_argument("--valence-table", type=Path)

    p_rec = sub.add_parser("reconstruct", help="encode-decode error vs iteration count")
    p_rec.add_argument("--ckpt", type=Path, required=True)
    p_rec.add_argument("--dataset", type=Path, required=True)
    p_rec.add_argument("--out", type=Path, required=True)
    p_rec.add_argument("--iterations", type=str, default="1,5,10,30,100",
                       help="comma-separated iteration counts")
    p_rec.add_argument("--count", type=int, help="cap the number of molecules")
    p_rec.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="per-molecule log-likelihood traces")
    p_eval.add_argument("--ckpt", type=Path, required=True)
    p_eval.add_argument("--dataset", type=Path, required=True)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--count", type=int)
    p_eval.add_argument("--seed", type=int, default=0)

    p_grid = sub.add_parser("latent-grid", help="decode a grid on the principal latent plane")
    p_grid.add_argument("--ckpt", type=Path, required=True)
    p_grid.add_argument("--dataset", type=Path, required=True)
    p_grid.add_argument("--out", type=Path, required=True)
    p_grid.add_argument("--grid-size", type=int, default=5)
    p_grid.add_argument("--grid-step", type=float, default=0.5)
    p_grid.add_argument("--count", type=int, default=100,
                        help="molecules used to fit the principal plane")
    p_grid.add_argument("--iterations", type=int, default=100)
    p_grid.add_argument("--seed", type=int, default=0)

    p_check = sub.add_parser("selfcheck", help="run the numerical property suites")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--dataset", type=Path,
                         help="also check dataset molecules' adjacency spectra")

    return parser


def _load_dataset(path: Path, schema, cap: int | None = None):
    raws = load_smiles_file(path)
    if cap is not None:
        raws = raws[:cap]
    return [pad_graph(raw, schema) for raw in raws]


def _parse_train_config(path) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = toy_config()
    train_cfg = TrainConfig()
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
        model_section = dict(blob.get("model", {}))
        if "atom_symbols" in model_section:
            model_section["atom_symbols"] = tuple(model_section["atom_symbols"])
        if model_section:
            model_cfg = ModelConfig(**model_section)
        train_cfg = TrainConfig(**blob.get("train", {}))
    return model_cfg, train_cfg


def _cmd_train(args) -> int:
    try:
        model_cfg, train_cfg = _parse_train_config(args.config)
    except (TypeError, ValueError, KeyError) as exc:
        print(f"data error: bad config file: {exc}", file=sys.stderr)
        return EXIT_DATA
    train_cfg.rng_seed = args.seed
    model_cfg.seed = args.seed
    model = GrfModel(model_cfg)
    dataset = _load_dataset(args.dataset, model.schema)
    args.out.mkdir(parents=True, exist_ok=True)
    history = train(model, dataset, train_cfg, out_dir=args.out)
    save_checkpoint(args.out / "model.npz", model)
    write_history_csv(history, args.out / "loss_history.csv")
    print(f"trained {train_cfg.epochs} epochs on {len(dataset)} molecules; "
          f"final nll {history[-1]['nll']:.4f}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    valences = load_valence_table(args.valence_table) if args.valence_table else None
    molecules = generate(model, args.count, args.tx, args.ta,
                         InversionConfig(iterations=args.iterations),
                         rng_seed=args.seed, threads=args.threads)
    training_set = set()
    if args.dataset:
        training_set = training_string_set(load_smiles_file(args.dataset))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "samples.smi", "w", encoding="utf-8") as fh:
        for i, mol in enumerate(molecules):
            if check_validity(mol, valences):
                fh.write(write_smiles(mol) + "\n")
            else:
                fh.write(f"# invalid sample {i}\n")
    # every sample, valid or not, as one graph object per line
    with open(args.out / "graphs.jsonl", "w", encoding="utf-8") as fh:
        for mol in molecules:
            fh.write(unpad_graph(mol).to_json_line() + "\n")
    if molecules:
        report = compute_metrics(molecules, training_set, table=valences)
        with open(args.out / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"{report.valid_count}/{report.sample_count} valid "
              f"(V={report.validity:.3f} N={report.novelty:.3f} U={report.uniqueness:.3f})")
    else:
        print("0 samples requested")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    graphs = _load_dataset(args.dataset, model.schema, cap=args.count)
    counts = [int(tok) for tok in args.iterations.split(",") if tok.strip()]
    rows = reconstruction_curve(model, graphs, counts, rng_seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "reconstruction.csv", "w", encoding="utf-8") as fh:
        fh.write("iterations,feature_l2,adjacency_l2,combined_l2,exact_rate\n")
        for row in rows:
            fh.write(f"{row['iterations']},{row['feature_l2']!r},{row['adjacency_l2']!r},"
                     f"{row['combined_l2']!r},{row['exact_rate']!r}\n")
    for row in rows:
        print(f"n={row['iterations']:>4d}  l2={row['combined_l2']:.3e}  "
              f"exact={row['exact_rate']:.3f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    graphs = _load_dataset(args.dataset, model.schema, cap=args.count)
    cfg = LogDetEstimatorConfig(series_terms=20, hutchinson_samples=64,
                                rng_seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    totals = []
    with open(args.out / "traces.jsonl", "w", encoding="utf-8") as fh:
        for i, g in enumerate(graphs):
            trace = full_logp(model, g, cfg, rng_seed=args.seed + i)
            record = {"index": i, **trace.to_dict()}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            totals.append(trace.total_logp)
    print(f"mean nll over {len(totals)} molecules: {-float(np.mean(totals)):.4f}")
    return EXIT_OK


def _cmd_latent_grid(args) -> int:
    model, _, _ = load_checkpoint(args.ckpt)
    graphs = _load_dataset(args.dataset, model.schema)
    records = latent_grid(model, graphs, grid_size=args.grid_size, step=args.grid_step,
                          rng_seed=args.seed, encode_count=args.count,
                          inversion=InversionConfig(iterations=args.iterations))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "latent_grid.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    n_valid = sum(1 for rec in records if rec["valid"])
    print(f"decoded {len(records)} grid points, {n_valid} valid")
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    extra = None
    if args.dataset:
        schema = GraphSchema(n_max=9, atom_symbols=("C", "N", "O", "F"))
        extra = _load_dataset(args.dataset, schema)
    results = run_selfcheck(seed=args.seed, extra_graphs=extra)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


_HANDLERS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "reconstruct": _cmd_reconstruct,
    "eval": _cmd_eval,
    "latent-grid": _cmd_latent_grid,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (SmilesError, ChemError, GraphError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
