"""``lapai`` command line.

Subcommands: zoom-solve, sweep, simulate, reconstruct, metrics.
Exit codes: 0 success, 1 validation or usage error, 2 numerical
infeasibility, 3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, zoom_optics
from .config import ConfigError, RunConfig, load_config
from .formats import FormatError, read_frame, read_image, write_frame, write_image
from .illumination import IlluminationError
from .metrics import METRICS_HEADER, MetricsError
from .pa_forward import ForwardError
from .recon import ReconError
from .sweep import Experiment, SweepError, reconstruct_frame, run_sweep, sweep_csv, write_sweep

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for infeasibility here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required, help="JSON run configuration")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=JSON",
                   help="override a config key, e.g. --set acquisition.noise_snr=40 (repeatable)")


def _scheme_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=float, default=12.0, help="fiber spacing d in mm (default 12)")
    p.add_argument("--theta", type=float, default=45.0, help="fiber angle in degrees (default 45)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lapai", description="Zoom illumination design and photoacoustic scheme sweeps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("zoom-solve", help="solve the zoom trajectory and verify it by ray tracing")
    _common(p)

    p = sub.add_parser("sweep", help="run the illumination scheme sweep")
    _common(p, config_required=True)
    p.add_argument("--threads", type=int, help="worker threads (default: $LAPAI_THREADS or 1)")
    p.add_argument("--no-denoise", action="store_true", help="skip wavelet denoising")

    p = sub.add_parser("simulate", help="simulate one scheme and write a PAF1 frame")
    _common(p)
    _scheme_args(p)

    p = sub.add_parser("reconstruct", help="reconstruct a PAF1 frame into a PGM image")
    _common(p)
    p.add_argument("frame", type=Path, help="PAF1 input")
    p.add_argument("--no-denoise", action="store_true", help="skip wavelet denoising")

    p = sub.add_parser("metrics", help="contrast and node count of a reconstructed PGM image")
    _common(p)
    _scheme_args(p)
    p.add_argument("image", type=Path, help="PGM input (its .csv sidecar must sit next to it)")
    return parser


def _threads(arg: Optional[int]) -> int:
    if arg is None:
        env = os.environ.get("LAPAI_THREADS")
        if env is None or env == "":
            return 1
        try:
            arg = int(env)
        except ValueError:
            raise UsageError(f"LAPAI_THREADS must be an integer, got {env!r}") from None
    if arg < 1:
        raise UsageError(f"--threads must be >= 1, got {arg}")
    return arg


def _load(args, need_schemes: bool = False) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=JSON, got {item!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    if need_schemes and not cfg.sweep.pairs():
        raise UsageError("sweep list is empty")
    cfg.check()
    return cfg


def cmd_zoom_solve(args) -> int:
    cfg = _load(args)
    zc = cfg.zoom.build()
    traj = zoom_optics.solve_trajectory(zc, cfg.zoom.n_samples)
    rep = zoom_optics.verify_trajectory(traj)
    afocal = max(zoom_optics.afocality_residual(zc, s) for s in traj.states)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "trajectory.csv"
    path.write_text(zoom_optics.trajectory_csv(traj))
    print(f"wrote {path} ({len(traj.states)} states, M {traj.M_min:.6g} to {traj.M_max:.6g})")
    print(f"max afocality residual: {afocal:.3e} 1/mm")
    print(f"max output slope: {rep.max_slope:.3e} rad")
    print(f"max conservation residual: {rep.max_conservation:.3e}")
    print(f"variator linearity residual: {rep.linearity_residual:.3e} mm")
    for f in rep.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    cfg = _load(args, need_schemes=True)
    threads = _threads(args.threads)
    results = run_sweep(cfg, threads, denoise=False if args.no_denoise else None)
    write_sweep(results, args.out)
    sys.stdout.write(sweep_csv(results))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    exp = Experiment(cfg)
    frame = exp.acquire(exp.fluence(args.d, args.theta))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"d{args.d:g}_theta{args.theta:g}.paf"
    write_frame(path, frame)
    print(f"wrote {path} ({frame.n_elements} x {frame.n_samples} samples)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _load(args)
    frame = read_frame(args.frame)
    image = reconstruct_frame(cfg, frame, False if args.no_denoise else None)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{args.frame.stem}.pgm"
    write_image(path, image)
    print(f"wrote {path} and {path.with_suffix('.csv')}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg = _load(args)
    image = read_image(args.image)
    result = Experiment(cfg).measure(image, args.d, args.theta)
    args.out.mkdir(parents=True, exist_ok=True)
    text = f"{METRICS_HEADER}\n{result.report.csv_row()}\n"
    (args.out / "metrics.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "zoom-solve": cmd_zoom_solve,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lapai {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (zoom_optics.InfeasibleZoomError, zoom_optics.LensCollisionError) as exc:
        print(f"lapai: infeasible: {exc}", file=sys.stderr)
        for lo, hi in getattr(exc, "intervals", ()):
            print(f"  m2 in [{lo:.9g}, {hi:.9g}]", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FormatError, OSError) as exc:
        print(f"lapai: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, zoom_optics.ZoomError, IlluminationError, ForwardError, ReconError, MetricsError,
            SweepError) as exc:
        print(f"lapai: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
