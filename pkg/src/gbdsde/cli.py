"""Command line front end: ``gbdsde --config run.ini --out results/``.

Exit codes: 0 when the experiment completes and its checks pass, 2 when a
checked property is violated, 1 on any error (one ``CODE: message`` line on
stderr).
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigInvalid, LabError
from .experiments import run_experiment
from .reporting import RunManifest, config_digest


def build_parser():
    ap = argparse.ArgumentParser(prog="gbdsde", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment file (.ini) or a manifest.json")
    ap.add_argument("--out", default=None, help="output directory (default runs/<kind>)")
    ap.add_argument("--seed", type=int, default=None, help="override [noise] seed")
    ap.add_argument("--engine", choices=("tree", "regression", "both"), default=None,
                    help="override [noise] engine")
    ap.add_argument("--quiet", action="store_true", help="suppress the summary line")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigInvalid("seed must fit in 64 bits")
            cfg["noise"]["seed"] = args.seed
        if args.engine is not None:
            cfg["noise"]["engine"] = args.engine
        out = Path(args.out or Path("runs") / (cfg["experiment"]["name"] or cfg["experiment"]["kind"]))
        t0 = time.perf_counter()
        summary, files, status = run_experiment(cfg, out)
        RunManifest(config=cfg, seed=cfg["noise"]["seed"], version=__version__,
                    wall_time=time.perf_counter() - t0, input_digest=config_digest(cfg),
                    files=files).write(out)
    except LabError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI contract is one coded line
        print(f"INTERNAL_ERROR: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        verdict = "PASS" if status == 0 else "PROPERTY_VIOLATION"
        print(f"{cfg['experiment']['kind']}: {verdict} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
