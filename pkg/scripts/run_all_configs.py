"""Run every shipped experiment config and print one status line per file.

Usage: python scripts/run_all_configs.py [--out runs] [configs/*.ini ...]
"""
import argparse
import sys
import time
from pathlib import Path

from gbdsde.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()
    configs = args.configs or sorted((ROOT / "configs").glob("*.ini"))
    worst = 0
    for cfg in configs:
        t0 = time.perf_counter()
        code = cli_main(["--config", str(cfg), "--out", str(args.out / cfg.stem), "--quiet"])
        print(f"{cfg.stem:36s} exit={code} {time.perf_counter() - t0:7.2f}s")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
