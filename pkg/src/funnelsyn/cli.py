"""Command line entry point ``funnelsyn``.

Exit codes: 0 success, 2 synthesis infeasible or failed, 3 verification
failed, 4 file or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import FunnelIOError, SynthesisError
from .funnel import load, write_ellipses_csv, write_input_bands_csv

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_IO = 4


def _dims(text):
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got {text!r}")
    return tuple(parts)


def build_parser():
    p = argparse.ArgumentParser(prog="funnelsyn", description="Invariant funnel synthesis and verification.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="solve the funnel SDP for a run configuration")
    s.add_argument("--config", required=True, help="JSON run configuration")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--solver", default=None, help="clarabel or cvxopt (overrides the config)")

    v = sub.add_parser("verify", help="Monte-Carlo and certificate checks of a funnel file")
    v.add_argument("--funnel", required=True)
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--csv", default=None, help="write per-sample results here")

    d = sub.add_parser("plot-data", help="write projected ellipses and input bands as CSV")
    d.add_argument("--funnel", required=True)
    d.add_argument("--dims", type=_dims, default=(0, 1), help="state indices, e.g. 0,1")
    d.add_argument("--out", default=None, help="output directory (default: next to the funnel)")
    return p


def _synthesize(args):
    from .pipeline import summary_lines, synthesize, write_outputs

    cfg = load_config(args.config)
    result = synthesize(cfg, solver=args.solver)
    print("\n".join(summary_lines(result)))
    try:
        path = write_outputs(result, cfg, args.out)
    except SynthesisError:
        return EXIT_INFEASIBLE
    print(f"funnel written to {path}")
    return EXIT_OK


def _verify(args):
    from .pipeline import verify_file_funnel

    funnel = load(args.funnel)
    rep = verify_file_funnel(funnel, n_samples=args.samples, seed=args.seed)
    print(rep.text())
    if args.csv:
        try:
            rep.monte_carlo.write_csv(args.csv)
        except OSError as exc:
            raise FunnelIOError(f"cannot write {args.csv}: {exc}") from exc
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _plot_data(args):
    funnel = load(args.funnel)
    out = Path(args.out) if args.out else Path(args.funnel).resolve().parent
    i, j = args.dims
    try:
        out.mkdir(parents=True, exist_ok=True)
        ell = out / f"ellipses_x{i + 1}_x{j + 1}.csv"
        write_ellipses_csv(funnel, ell, (i, j))
        bands = out / "input_bands.csv"
        write_input_bands_csv(funnel, bands)
    except OSError as exc:
        raise FunnelIOError(f"cannot write plot data to {out}: {exc}") from exc
    print(ell)
    print(bands)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"synthesize": _synthesize, "verify": _verify, "plot-data": _plot_data}[args.command]
    try:
        return handler(args)
    except FunnelIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
