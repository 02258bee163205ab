"""Command-line entry point: register, evaluate dice, jacobian, phantom."""

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
import time

import numpy as np
from scipy import fft

from . import nifti
from .config import config_as_dict, load_config, valid_keys
from .errors import RegistrationError
from .evaluation import dice, jacobian_determinant, jacobian_histogram
from .optimizer import minimize
from .phantom import KINDS, make_phantom

log = logging.getLogger("diffeoraptor")

EXIT_FAILURE = 1
EXIT_USAGE = 2


class MissingInputError(RegistrationError):
    def __init__(self, path):
        super().__init__(f"input file not found: {path}")
        self.path = path


def _require(*paths):
    for path in paths:
        if path is not None and not os.path.isfile(path):
            raise MissingInputError(path)


def _stem(path):
    base = os.fspath(path)
    for ext in (".nii.gz", ".nii"):
        if base.endswith(ext):
            return base[: -len(ext)]
    return os.path.splitext(base)[0]


class OutputSet:
    """Tracks written files so a failing command leaves nothing behind."""

    def __init__(self):
        self.paths = []

    def claim(self, path):
        self.paths.append(os.fspath(path))
        return path

    def discard(self):
        for path in self.paths:
            for candidate in (path, path + ".partial"):
                with contextlib.suppress(FileNotFoundError):
                    os.remove(candidate)


def _write_text(path, text):
    tmp = path + ".partial"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _trace_csv(trace):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["level", "iteration", "data", "regularizer", "total"])
    for r in trace:
        writer.writerow([r.level, r.iteration, repr(r.data), repr(r.regularizer), repr(r.total)])
    return buf.getvalue()


def run_register(args, outputs):
    _require(args.fixed, args.moving, args.config)
    overrides = list(args.overrides)
    if args.metric is not None:
        overrides.append(f"metric={args.metric}")
    cfg = load_config(args.config, overrides)
    fixed = nifti.read_volume(args.fixed)
    moving = nifti.read_volume(args.moving)
    start = time.perf_counter()
    result = minimize(fixed, moving, cfg)
    log.info("registration finished in %.1f s", time.perf_counter() - start)
    det = jacobian_determinant(result.inverse_map).data
    final = result.energy_trace[-1]
    stem = _stem(args.out_field)
    trace_path = args.out_trace or stem + "_trace.csv"
    summary_path = args.out_summary or stem + "_summary.json"
    summary = {
        "fixed": os.fspath(args.fixed),
        "moving": os.fspath(args.moving),
        "config": config_as_dict(cfg),
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "final_energy": {"data": final.data, "regularizer": final.regularizer, "total": final.total},
        "min_jacobian_determinant": float(det.min()),
        "non_positive_jacobians": int(np.count_nonzero(det <= 0)),
    }
    nifti.write_volume(result.warped, outputs.claim(args.out_warped), description="warped moving image")
    nifti.write_displacement(result.inverse_map, outputs.claim(args.out_field))
    _write_text(outputs.claim(trace_path), _trace_csv(result.energy_trace))
    _write_text(outputs.claim(summary_path), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def run_dice(args, outputs):
    _require(args.labels_a, args.labels_b)
    a = nifti.read_labels(args.labels_a)
    b = nifti.read_labels(args.labels_b)
    score = dice(a, b, args.label)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow([os.fspath(args.labels_a), os.fspath(args.labels_b), args.label, f"{score:.6f}"])
    return 0


def run_jacobian(args, outputs):
    _require(args.field)
    field = nifti.read_displacement(args.field)
    hist = jacobian_histogram(field, args.bin_width)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_lower", "bin_upper", "count"])
    for lo, hi, count in hist.rows():
        writer.writerow([f"{lo:.6g}", f"{hi:.6g}", count])
    writer.writerow(["non_positive", "", hist.non_positive])
    _write_text(outputs.claim(args.out), buf.getvalue())
    det = jacobian_determinant(field).data
    print(f"min_det={det.min():.6g} max_det={det.max():.6g} non_positive={hist.non_positive}")
    return 0


def run_phantom(args, outputs):
    dims = args.dims[0] if len(args.dims) == 1 else tuple(args.dims)
    volume, labels = make_phantom(
        args.kind, dims, radius=args.radius, period=args.period, texture=args.texture,
        noise=args.noise, seed=args.seed,
    )
    nifti.write_volume(volume, outputs.claim(args.out), description=f"{args.kind} phantom")
    if args.out_labels:
        nifti.write_labels(labels, outputs.claim(args.out_labels))
    return 0


def build_parser():
    # accepted both before and after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="FFT worker threads (default: all cores; 1 for bit-reproducibility)")

    parser = argparse.ArgumentParser(prog="diffeoraptor", parents=[common],
                                     description="Diffeomorphic registration with a patch correlation-ratio metric.")
    parser.set_defaults(verbose=0, threads=None)
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", parents=[common], help="register a moving image onto a fixed image",
                         epilog="configuration keys: " + ", ".join(valid_keys()))
    reg.add_argument("--fixed", required=True)
    reg.add_argument("--moving", required=True)
    reg.add_argument("--metric", choices=("raptor", "ssd"))
    reg.add_argument("--out-warped", required=True)
    reg.add_argument("--out-field", required=True)
    reg.add_argument("--out-trace", help="energy trace CSV (default: next to the field)")
    reg.add_argument("--out-summary", help="JSON run summary (default: next to the field)")
    reg.add_argument("--config", help="flat TOML configuration file")
    reg.add_argument("overrides", nargs="*", metavar="key=value")
    reg.set_defaults(func=run_register)

    ev = sub.add_parser("evaluate", help="evaluation measures")
    ev_sub = ev.add_subparsers(dest="measure", required=True)
    dc = ev_sub.add_parser("dice", parents=[common], help="Dice overlap of one label; prints a CSV row")
    dc.add_argument("--labels-a", required=True)
    dc.add_argument("--labels-b", required=True)
    dc.add_argument("--label", type=int, default=1)
    dc.set_defaults(func=run_dice)

    jac = sub.add_parser("jacobian", parents=[common], help="histogram of log10 det J of a displacement field")
    jac.add_argument("--field", required=True)
    jac.add_argument("--bin-width", type=float, default=0.05)
    jac.add_argument("--out", required=True)
    jac.set_defaults(func=run_jacobian)

    ph = sub.add_parser("phantom", parents=[common], help="write a synthetic volume and label map")
    ph.add_argument("--kind", choices=KINDS, default="sphere")
    ph.add_argument("--dims", type=int, nargs="+", default=[64])
    ph.add_argument("--out", required=True)
    ph.add_argument("--out-labels")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--radius", type=float)
    ph.add_argument("--period", type=float)
    ph.add_argument("--texture", type=float, default=0.0)
    ph.add_argument("--noise", type=float, default=0.0)
    ph.set_defaults(func=run_phantom)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    # key=value overrides may follow options, which argparse leaves unclaimed
    if extra:
        if args.command != "register" or any(t.startswith("-") or "=" not in t for t in extra):
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        args.overrides = list(args.overrides) + extra
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    workers = args.threads or os.cpu_count() or 1
    outputs = OutputSet()
    try:
        with fft.set_workers(workers):
            return args.func(args, outputs)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RegistrationError, OSError, ValueError) as exc:
        outputs.discard()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
