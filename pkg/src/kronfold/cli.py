"""Command-line interface: ``kronfold {synth,fit,eval,decompose}``.

Standard output carries one JSON object per line.  Exit codes: 0 success,
2 invalid flags, 3 data errors, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataset as ds
from .evaluation import METHODS, sweep, worker_count
from .glram import FitConfig, glram_fit, glram_objective
from .kronecker import kron_rank_decompose, reassemble
from .modelfile import ModelFileError, load_document, load_model, model_from_document, save_model
from .mpglram import (MpglramConfig, MpglramModel, RankDeficientWarning, SingularSystemError,
                      mpglram_fit, mpglram_objective)
from .svd_baseline import SvdModel, svd_fit, svd_objective

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_grid(text):
    """Parse ``"5:9"``, ``"2,5,10"`` or mixes like ``"1,3:5"`` into ints."""
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            if len(bits) == 2:
                lo, hi, step = bits[0], bits[1], 1
            elif len(bits) == 3:
                lo, hi, step = bits
            else:
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            if step < 1 or hi < lo:
                raise argparse.ArgumentTypeError(f"bad range {part!r}")
            values.extend(range(lo, hi + 1, step))
        else:
            values.append(int(part))
    if not values:
        raise argparse.ArgumentTypeError(f"empty grid {text!r}")
    return values


def _grid(text):
    try:
        return parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _methods(text):
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}")
    return names


def build_parser():
    parser = _Parser(prog="kronfold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a seeded synthetic Kronecker-structured dataset")
    p.add_argument("--n1", type=int, required=True)
    p.add_argument("--n2", type=int, required=True)
    p.add_argument("--n", type=int, required=True, help="sample count")
    p.add_argument("--kron-rank", type=int, default=1)
    p.add_argument("--k1", type=int, default=2)
    p.add_argument("--k2", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--class-spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="also write the generating pairs and cores as a model file")

    p = sub.add_parser("fit", help="fit svd, glram or mpglram on an MDS1 file")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k1", type=int)
    p.add_argument("--k2", type=int)
    p.add_argument("--d", type=int, help="svd rank (defaults to k1*k2)")
    p.add_argument("--k-pairs", type=int, default=1)
    p.add_argument("--init", help="glram: identity|random; mpglram: glram-warm|random|pairs-warm")
    p.add_argument("--init-model", help="model file supplying pairs for --init pairs-warm")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centered", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="RMSRE and k-fold k-NN accuracy sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--d-grid", type=_grid, default=[5, 6, 7, 8, 9],
                   help="core side lengths; svd keeps d*d components")
    p.add_argument("--k-grid", type=_grid, default=[2], help="mpglram pair counts")
    p.add_argument("--folds", type=_grid, default=[2, 5, 10])
    p.add_argument("--knn", type=_grid, default=[1])
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centered", action="store_true")
    p.add_argument("--timing", action="store_true",
                   help="record wall times (outputs are then not byte-reproducible)")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.add_argument("--out-table", help="write the fold x d accuracy table as CSV")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("decompose", help="Kronecker-rank decomposition of a stored svd projector")
    p.add_argument("--model", required=True)
    p.add_argument("--block-dims", type=int, nargs=4, required=True,
                   metavar=("N1", "K1", "N2", "K2"),
                   help="view W as an N1 x K1 grid of N2 x K2 blocks")
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--out")
    return parser


def _emit(obj):
    print(json.dumps(obj), flush=True)


def _load_data(path):
    try:
        return ds.load_mds(path)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: no such file") from exc
    except (OSError, ds.DatasetError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _finite(value, what):
    if not np.isfinite(value):
        raise FloatingPointError(f"{what} is not finite")
    return value


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    try:
        spec = ds.SyntheticSpec(args.n1, args.n2, args.n, args.kron_rank, (args.k1, args.k2),
                                args.noise, args.classes, args.seed, args.class_spread)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data, pairs, cores = ds.synth_kron(spec)
    ds.save_mds(data, args.out)
    fp = ds.fingerprint(data)
    if args.truth_out:
        truth = MpglramModel(pairs, cores, [mpglram_objective(data, pairs, cores)])
        save_model(truth, args.truth_out, fp, args.seed, method="truth")
    _emit({"command": "synth", "out": args.out, "N": data.N, "n1": data.n1, "n2": data.n2,
           "fingerprint": fp})
    return EXIT_OK


def _require_dims(args):
    if args.k1 is None or args.k2 is None:
        raise UsageError(f"--method {args.method} needs --k1 and --k2")
    if args.k1 < 1 or args.k2 < 1:
        raise UsageError("--k1 and --k2 must be positive")


def cmd_fit(args):
    data = _load_data(args.data)
    fp = ds.fingerprint(data)
    if args.method == "svd":
        d = args.d
        if d is None:
            _require_dims(args)
            d = args.k1 * args.k2
        if not 1 <= d <= min(data.n1 * data.n2, data.N):
            raise UsageError(f"--d must be in [1, {min(data.n1 * data.n2, data.N)}]")
        model = svd_fit(data, d, args.centered)
        objective, iterations = svd_objective(data, model), 1
    elif args.method == "glram":
        _require_dims(args)
        try:
            config = FitConfig(args.k1, args.k2, args.max_iter, args.tol, args.seed,
                               args.init or "identity")
            config.check_dims(data.n1, data.n2)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        model = glram_fit(data, config)
        objective, iterations = glram_objective(data, model)[0], model.iterations
    else:
        _require_dims(args)
        try:
            config = MpglramConfig(args.k_pairs, args.k1, args.k2, outer_iters=args.max_iter,
                                   tol=args.tol, seed=args.seed,
                                   init_mode=args.init or "glram-warm", ridge_rel=args.ridge)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if args.k1 > data.n1 or args.k2 > data.n2:
            raise UsageError(f"(k1, k2) exceeds sample shape ({data.n1}, {data.n2})")
        warm = None
        if config.init_mode == "pairs-warm":
            if not args.init_model:
                raise UsageError("--init pairs-warm needs --init-model")
            try:
                warm = load_model(args.init_model)
            except (OSError, ModelFileError) as exc:
                raise DataError(f"{args.init_model}: {exc}") from exc
        try:
            model = mpglram_fit(data, config, warm)
        except ValueError as exc:
            if isinstance(exc, np.linalg.LinAlgError):
                raise
            raise UsageError(str(exc)) from exc
        objective, iterations = mpglram_objective(data, model), model.sweeps
    _finite(objective, "objective")
    save_model(model, args.out, fp, args.seed)
    _emit({"command": "fit", "method": args.method, "objective": objective,
           "iterations": iterations, "out": args.out, "fingerprint": fp})
    if args.verbose:
        print(f"{args.method}: objective {objective:.6g} after {iterations} iteration(s)",
              file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    data = _load_data(args.data)
    if min(args.d_grid) < 1 or min(args.k_grid) < 1 or min(args.knn) < 1 or min(args.folds) < 2:
        raise UsageError("grid values out of range")
    if max(args.d_grid) > min(data.n1, data.n2):
        raise UsageError(f"--d-grid exceeds sample shape ({data.n1}, {data.n2})")
    if not data.has_labels:
        raise DataError(f"{args.data}: eval needs a labeled dataset")
    report = sweep(data, args.methods, args.d_grid, args.k_grid, args.folds, args.seed,
                   args.knn, args.max_iter, args.tol, args.centered, args.timing,
                   workers=worker_count())
    report.metadata["fingerprint"] = ds.fingerprint(data)
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv())
    if args.out_json:
        Path(args.out_json).write_text(report.to_json())
    tables = report.accuracy_table()
    if args.out_table:
        lines = []
        for knn, rows in tables.items():
            lines.append("knn,k_fold,d,svd,glram,mpglram")
            for fc, d, *accs in rows:
                cells = ["" if a is None else f"{a:.2f}" for a in accs]
                lines.append(",".join([str(knn), str(fc), str(d), *cells]))
        Path(args.out_table).write_text("\n".join(lines) + "\n")
    if args.verbose:
        for knn, rows in tables.items():
            print(f"{knn}-NN accuracy (%)", file=sys.stderr)
            print(f"{'k-fold':>6} {'d':>3} {'SVD':>7} {'GLRAM':>7} {'MPGLRAM':>7}", file=sys.stderr)
            for fc, d, *accs in rows:
                cells = " ".join("      -" if a is None else f"{a:7.2f}" for a in accs)
                print(f"{fc:>6} {d:>3} {cells}", file=sys.stderr)
    rc = EXIT_NUMERIC if report.failures else EXIT_OK
    _emit({"command": "eval", "records": len(report.records), "failures": report.failures,
           "out_csv": args.out_csv, "out_json": args.out_json})
    return rc


def cmd_decompose(args):
    try:
        doc = load_document(args.model)
        model = model_from_document(doc)
    except FileNotFoundError as exc:
        raise DataError(f"{args.model}: no such file") from exc
    except (OSError, ModelFileError) as exc:
        raise DataError(f"{args.model}: {exc}") from exc
    if not isinstance(model, SvdModel):
        raise UsageError(f"{args.model} is a {doc['method']} model; decompose needs an svd model")
    n1, k1, n2, k2 = args.block_dims
    W = model.W
    if min(n1, k1, n2, k2) < 1 or W.shape != (n1 * n2, k1 * k2):
        raise UsageError(f"W of shape {W.shape} does not factor as ({n1}*{n2}) x ({k1}*{k2})")
    pairs, sigma = kron_rank_decompose(W, n1, k1, n2, k2, args.max_pairs, return_spectrum=True)
    norm_W = float(np.linalg.norm(W))
    for t in range(1, pairs.k + 1):
        partial = reassemble(list(pairs)[:t])
        _emit({"pair": t, "sigma": float(sigma[t - 1]),
               "residual": float(np.linalg.norm(W - partial)),
               "tail_energy": float(np.sqrt(np.sum(sigma[t:] ** 2)))})
    residual = float(np.linalg.norm(W - reassemble(pairs)))
    if args.out:
        save_model(pairs, args.out, doc["fingerprint"], doc.get("seed", 0), method="kron-pairs")
    _emit({"command": "decompose", "pairs": pairs.k, "residual": residual,
           "relative_residual": residual / norm_W if norm_W else 0.0, "out": args.out})
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "eval": cmd_eval, "decompose": cmd_decompose}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficientWarning)
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kronfold {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"kronfold {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, SingularSystemError, FloatingPointError) as exc:
        print(f"kronfold {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
