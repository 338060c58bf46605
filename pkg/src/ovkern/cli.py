"""Command-line front end.

Tables are written as CSV with a header row, reports as ``key=value`` lines.
Exit codes: 0 success, 2 usage error, 3 data/model validation error,
4 numerical failure. Errors print one ``error: <CODE>: <context>`` line on
standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._io import write_text_atomic
from .classify import LabeledFunctionalDataset, confusion_matrix, frlsc_fit, recognition_rate
from .datagen import (
    SynthSpec,
    curves_csv_text,
    gen_classification_task,
    gen_regression_task,
    load_dataset,
    load_inputs,
    read_curve_csv,
    save_dataset,
)
from .errors import DataFormatError, NumericalError, OvkernError, ParameterError
from .funcspace import FunctionalDataset, Grid, as_function_tuple
from .kernels import (
    Discretized,
    Integral,
    Multiplication,
    ScalarKernel,
    SeparableKernel,
    identity_operator,
    median_heuristic,
    positivity_check,
)
from .learn import (
    DEFAULT_KAPPA_GRID,
    DEFAULT_LAMBDA_GRID,
    fit,
    fit_dense_oracle,
    load_model,
    operator_eigs,
    predict_values,
    save_model,
    select_hyperparams,
    stability_bound,
)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4


# --------------------------------------------------------------------------
# argument types
# --------------------------------------------------------------------------

def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text!r}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (np.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"must be a nonnegative number, got {text!r}")
    return v


def _unit_open(text):
    v = _positive_float(text)
    if v >= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text!r}")
    return v


def _int_at_least(lo):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {v}")
        return v
    parse.__name__ = f"int>={lo}"
    return parse


def _bandwidth(text):
    if text == "median":
        return text
    return _positive_float(text)


def _float_list(text):
    vals = [_positive_float(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text):
    parse = _int_at_least(1)
    vals = [parse(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not (0 <= v < 1 << 64):
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_operator_flags(p):
    g = p.add_argument_group("operator")
    g.add_argument("--operator", choices=("mult", "intexp", "disc", "identity"), default="intexp",
                   help="output-space operator T (default: intexp, exp(-|t-s|) integral)")
    g.add_argument("--h-file", metavar="CSV",
                   help="multiplier h(t) as a t,value CSV (required by --operator mult)")
    g.add_argument("--op-matrix-file", metavar="CSV",
                   help="symmetric m x m matrix, comma separated, no header "
                        "(required by --operator disc)")


def _add_kernel_flags(p):
    g = p.add_argument_group("scalar kernel")
    g.add_argument("--scalar", choices=("linear", "gaussian"), default="gaussian",
                   help="scalar kernel on input tuples (default: gaussian)")
    g.add_argument("--bandwidth", type=_bandwidth, default=1.0,
                   help="gaussian bandwidth, or 'median' for the median pairwise "
                        "distance of the training inputs (default: 1.0)")
    _add_operator_flags(p)


def _add_output(p, what):
    p.add_argument("-o", "--output", metavar="PATH", help=f"{what} (default: standard output)")


class _Parser(argparse.ArgumentParser):
    """Usage errors end with a coded ``error: E_USAGE: ...`` line."""

    def error(self, message):
        self.print_usage(sys.stderr)
        msg = " ".join(f"{self.prog}: {message}".split())
        self.exit(EXIT_USAGE, f"error: E_USAGE: {msg}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ovkern",
        description="Function-valued regression and classification with operator-valued kernels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen", help="generate a seeded synthetic dataset",
                       description="Generate a seeded synthetic regression or classification dataset.")
    p.add_argument("--task", choices=("regression", "classification"), default="regression",
                   help="task type (default: regression)")
    p.add_argument("--seed", type=_seed, default=0, help="64-bit seed (default: 0)")
    p.add_argument("--n", type=_int_at_least(2), default=40, help="sample count (default: 40)")
    p.add_argument("--p", type=_int_at_least(1), default=2, help="input curves per sample (default: 2)")
    p.add_argument("--m-in", type=_int_at_least(2), default=25, help="input grid size (default: 25)")
    p.add_argument("--m-out", type=_int_at_least(2), default=25, help="output grid size (default: 25)")
    p.add_argument("--modes", type=_int_at_least(1), default=3,
                   help="Fourier modes per input curve (default: 3)")
    p.add_argument("--decay", type=_positive_float, default=1.5,
                   help="coefficient decay exponent (default: 1.5)")
    p.add_argument("--noise-sd", type=_nonneg_float, default=0.0,
                   help="output noise sd, regression only (default: 0)")
    p.add_argument("--classes", type=_int_at_least(2), default=3,
                   help="class count, classification only (default: 3)")
    p.add_argument("--margin", type=_positive_float, default=2.0,
                   help="min distance between class means (default: 2.0)")
    p.add_argument("--amplitude", type=_nonneg_float, default=1.0,
                   help="max perturbation norm (default: 1.0)")
    p.add_argument("-o", "--output", metavar="PATH", required=True, help="dataset file to write")
    p.add_argument("--test-n", type=_int_at_least(1),
                   help="extra samples from the same task, written to --test-output")
    p.add_argument("--test-output", metavar="PATH", help="held-out dataset file to write")

    p = sub.add_parser("fit", help="train a regressor",
                       description="Fit a function-valued regressor and save it as a model file.")
    p.add_argument("--data", metavar="PATH", required=True, help="regression dataset")
    p.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=_positive_float, required=True,
                   help="regularization parameter")
    p.add_argument("--kappa", type=_int_at_least(1),
                   help="retained operator eigenfunctions (default: output grid size)")
    p.add_argument("--eig-method", choices=("discrete", "analytic"), default="discrete",
                   help="operator eigenpairs: quadrature or closed form (default: discrete)")
    p.add_argument("--dense", action="store_true",
                   help="solve the assembled block system instead (small problems only)")
    _add_kernel_flags(p)
    p.add_argument("-o", "--output", metavar="PATH", required=True, help="model file to write")

    p = sub.add_parser("predict", help="predict output curves",
                       description="Predict output curves; CSV columns sample,t,value.")
    p.add_argument("--model", metavar="PATH", required=True, help="model file")
    p.add_argument("--inputs", metavar="PATH", required=True,
                   help="dataset file whose inputs are used (y and label optional)")
    _add_output(p, "CSV file")

    p = sub.add_parser("evaluate", help="RSSE of a model on a dataset",
                       description="Print rsse=<value> for a model on a regression dataset.")
    p.add_argument("--model", metavar="PATH", required=True, help="model file")
    p.add_argument("--data", metavar="PATH", required=True, help="regression dataset")
    p.add_argument("--per-curve", metavar="PATH",
                   help="also write per-curve errors as CSV (sample,rsse)")

    p = sub.add_parser("cv", help="select (lambda, kappa) by leave-one-curve-out CV",
                       description="Leave-one-curve-out CV over lambda x kappa; the table is CSV "
                                   "(lambda,kappa,cv_score), the chosen pair goes to standard output.")
    p.add_argument("--data", metavar="PATH", required=True, help="regression dataset")
    p.add_argument("--lambdas", type=_float_list, metavar="L1,L2,...",
                   help="lambda grid (default: 7 log-spaced values 1e-4..10)")
    p.add_argument("--kappas", type=_int_list, metavar="K1,K2,...",
                   help="kappa grid (default: 5,10,20)")
    p.add_argument("--eig-method", choices=("discrete", "analytic"), default="discrete",
                   help="operator eigenpairs (default: discrete)")
    _add_kernel_flags(p)
    _add_output(p, "table CSV")

    p = sub.add_parser("classify", help="train and test a one-vs-all classifier",
                       description="Train on labeled curves, write the confusion matrix as CSV "
                                   "and print recognition_rate=<percent>.")
    p.add_argument("--train", metavar="PATH", required=True, help="labeled training dataset")
    p.add_argument("--test", metavar="PATH", required=True, help="labeled test dataset")
    p.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=_positive_float, required=True,
                   help="regularization parameter")
    p.add_argument("--kappa", type=_int_at_least(1), default=10,
                   help="retained operator eigenfunctions (default: 10)")
    _add_kernel_flags(p)
    _add_output(p, "confusion CSV")

    p = sub.add_parser("eigs", help="dump operator eigenpairs",
                       description="Eigenpairs of the output operator; CSV columns "
                                   "mode,mu,delta,t,value (mu empty unless analytic).")
    p.add_argument("--count", type=_int_at_least(1), default=5, help="modes to dump (default: 5)")
    p.add_argument("--m", type=_int_at_least(2), default=101,
                   help="uniform grid size on [0, 1] (default: 101)")
    p.add_argument("--method", choices=("analytic", "discrete"), default="analytic",
                   help="closed form (intexp only) or quadrature (default: analytic)")
    _add_operator_flags(p)
    _add_output(p, "CSV file")

    p = sub.add_parser("positivity", help="eigenvalue check of the block kernel matrix",
                       description="Report min_eig, max_eig and passed for the block kernel matrix "
                                   "of a dataset's inputs.")
    p.add_argument("--data", metavar="PATH", required=True, help="dataset (inputs are used)")
    p.add_argument("--tol", type=_positive_float, default=1e-8,
                   help="relative tolerance (default: 1e-8)")
    _add_kernel_flags(p)

    p = sub.add_parser("stability", help="uniform-stability constants",
                       description="Print the stability report as key=value lines.")
    p.add_argument("--data", metavar="PATH", required=True, help="regression dataset")
    p.add_argument("--lambda", dest="lam", metavar="LAMBDA", type=_positive_float, required=True,
                   help="regularization of the normalized risk")
    p.add_argument("--confidence", type=_unit_open, default=0.05,
                   help="failure probability delta of the bound (default: 0.05)")
    _add_kernel_flags(p)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _read_matrix(path) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    return A


def make_operator(args, grid: Grid):
    if args.operator == "intexp":
        return Integral()
    if args.operator == "identity":
        return identity_operator(grid)
    if args.operator == "mult":
        if not args.h_file:
            raise ParameterError("--operator mult needs --h-file")
        return Multiplication(read_curve_csv(args.h_file, grid))
    if not args.op_matrix_file:
        raise ParameterError("--operator disc needs --op-matrix-file")
    return Discretized(_read_matrix(args.op_matrix_file))


def make_kernel(args, grid: Grid, inputs=None) -> SeparableKernel:
    bw = args.bandwidth
    if bw == "median":
        if inputs is None:
            raise ParameterError("--bandwidth median needs training inputs")
        bw = median_heuristic(inputs)
    return SeparableKernel(ScalarKernel(args.scalar, bw), make_operator(args, grid))


def _emit(path: Optional[str], text: str, out):
    if path:
        write_text_atomic(path, text)
    else:
        out.write(text)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _regression(path) -> FunctionalDataset:
    data = load_dataset(path)
    if not isinstance(data, FunctionalDataset):
        raise DataFormatError(f"{path}: expected a regression dataset (samples with 'y')")
    return data


def _labeled(path) -> LabeledFunctionalDataset:
    data = load_dataset(path)
    if not isinstance(data, LabeledFunctionalDataset):
        raise DataFormatError(f"{path}: expected a labeled dataset (samples with 'label')")
    return data


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen(args, out):
    spec = SynthSpec(seed=args.seed, n=args.n, p=args.p, m_in=args.m_in, m_out=args.m_out,
                     basis_modes=args.modes, coeff_decay=args.decay, noise_sd=args.noise_sd,
                     task=args.task, n_classes=args.classes, margin=args.margin,
                     amplitude=args.amplitude)
    if (args.test_n is None) != (args.test_output is None):
        raise ParameterError("--test-n and --test-output go together")
    extra = args.test_n or 0
    spec = replace(spec, n=spec.n + extra)
    if args.task == "regression":
        data, _ = gen_regression_task(spec)
    else:
        data, _ = gen_classification_task(spec)
    save_dataset(args.output, data.subset(range(args.n)))
    if extra:
        save_dataset(args.test_output, data.subset(range(args.n, args.n + extra)))


def cmd_fit(args, out):
    data = _regression(args.data)
    K = make_kernel(args, data.output_grid, data.inputs)
    if args.dense:
        model = fit_dense_oracle(data, K, args.lam)
    else:
        kappa = args.kappa if args.kappa is not None else len(data.output_grid)
        model = fit(data, K, args.lam, kappa, args.eig_method)
    save_model(args.output, model)


def cmd_predict(args, out):
    model = load_model(args.model)
    P = predict_values(model, load_inputs(args.inputs))
    _emit(args.output, curves_csv_text(as_function_tuple(P, model.output_grid), with_index=True), out)


def cmd_evaluate(args, out):
    model = load_model(args.model)
    data = _regression(args.data)
    if not data.output_grid.same_as(model.output_grid):
        raise DataFormatError("dataset and model use different output grids")
    R = data.output_matrix() - predict_values(model, data.inputs)
    per = (R * R) @ model.output_grid.weights
    if args.per_curve:
        write_text_atomic(args.per_curve, _csv([[i, repr(float(e))] for i, e in enumerate(per)],
                                               ["sample", "rsse"]))
    out.write(f"rsse={float(per.sum())!r}\n")


def cmd_cv(args, out):
    data = _regression(args.data)
    K = make_kernel(args, data.output_grid, data.inputs)
    sel = select_hyperparams(data, K, args.lambdas or DEFAULT_LAMBDA_GRID,
                             args.kappas or DEFAULT_KAPPA_GRID, args.eig_method)
    table = _csv([[repr(l), k, repr(s)] for l, k, s in sel.table], ["lambda", "kappa", "cv_score"])
    if args.output:
        write_text_atomic(args.output, table)
    else:
        out.write(table)
    out.write(f"lambda={sel.lam!r}\nkappa={sel.kappa}\ncv_score={sel.score!r}\n")


def cmd_classify(args, out):
    train, test = _labeled(args.train), _labeled(args.test)
    K = make_kernel(args, train.output_grid, train.inputs)
    clf = frlsc_fit(train, K, args.lam, args.kappa)
    cm = confusion_matrix(clf, test)
    N = cm.shape[0]
    rows = [[t + 1] + cm[t].tolist() for t in range(N)]
    text = _csv(rows, ["true"] + [f"pred_{c + 1}" for c in range(N)])
    if args.output:
        write_text_atomic(args.output, text)
    else:
        out.write(text)
    out.write(f"recognition_rate={recognition_rate(cm)!r}\n")


def cmd_eigs(args, out):
    grid = Grid.uniform(args.m)
    if args.count > args.m:
        raise ParameterError(f"--count {args.count} exceeds grid size {args.m}")
    K = SeparableKernel(ScalarKernel(), make_operator(args, grid))
    oe = operator_eigs(K, grid, args.count, "analytic" if args.method == "analytic" else "discrete")
    rows = []
    for k in range(oe.kappa):
        mu = "" if oe.mus is None else repr(float(oe.mus[k]))
        d = repr(float(oe.deltas[k]))
        rows.extend([k + 1, mu, d, repr(float(t)), repr(float(v))]
                    for t, v in zip(grid.points, oe.funcs[k]))
    _emit(args.output, _csv(rows, ["mode", "mu", "delta", "t", "value"]), out)


def cmd_positivity(args, out):
    data = load_dataset(args.data)
    K = make_kernel(args, data.output_grid, data.inputs)
    rep = positivity_check(K, data.inputs, data.output_grid, tol=args.tol)
    out.write(f"min_eig={rep.min_eig!r}\nmax_eig={rep.max_eig!r}\n"
              f"tol={rep.tol!r}\npassed={str(rep.passed).lower()}\n")


def cmd_stability(args, out):
    data = _regression(args.data)
    K = make_kernel(args, data.output_grid, data.inputs)
    rep = stability_bound(data, K, args.lam, args.confidence)
    out.write("".join(line + "\n" for line in rep.as_lines()))


COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "classify": cmd_classify,
    "eigs": cmd_eigs,
    "positivity": cmd_positivity,
    "stability": cmd_stability,
}


def _fail(err, code: str, msg: str, status: int) -> int:
    msg = " ".join(str(msg).split())
    err.write(f"error: {code}: {msg}\n")
    return status


def run(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    """Run the command line and return the exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        COMMANDS[args.command](args, out)
    except NumericalError as exc:
        return _fail(err, exc.code, exc, EXIT_NUMERICAL)
    except OvkernError as exc:
        return _fail(err, exc.code, exc, EXIT_VALIDATION)
    except np.linalg.LinAlgError as exc:
        return _fail(err, "E_NUMERICAL", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail(err, "E_IO", f"{exc.filename or ''}: {exc.strerror or exc}", EXIT_VALIDATION)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
