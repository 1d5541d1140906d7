#!/usr/bin/env python3
"""Run the full desk-scale pipeline end to end for one or more seeds.

Builds a synthetic corpus if the configured image directory is missing,
then drives prepare, train, sample, analyze, and report through the CLI.
Each seed gets its own artifact directory (seed_<N>/ under --out).
"""

import argparse
import sys
import time
from pathlib import Path

from cgdbm.cli import main as cgdbm_main
from cgdbm.config import load_config
from cgdbm.io import write_pgm
from cgdbm.synth import make_corpus


def ensure_corpus(image_dir: Path, seed: int = 0) -> None:
    if image_dir.is_dir() and any(image_dir.iterdir()):
        return
    image_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(make_corpus(12, 128, seed, n_shapes=220)):
        write_pgm(image_dir / f"scene_{i:03d}.pgm", img, maxval=65535)
    print(f"built synthetic corpus in {image_dir}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/desk.cfg")
    ap.add_argument("--out", default="desk_runs")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    cfg = load_config(args.config)
    ensure_corpus(Path(cfg.data.image_dir))
    failures = 0
    for seed in args.seeds:
        out_dir = Path(args.out) / f"seed_{seed}"
        base = ["--config", args.config, "--out-dir", str(out_dir),
                "--seed", str(seed)]
        t0 = time.time()
        for step in ("prepare", "train", "sample", "analyze"):
            rc = cgdbm_main([step, *base])
            if rc != 0:
                print(f"seed {seed}: {step} failed with exit code {rc}")
                failures += 1
                break
        else:
            cgdbm_main(["report", "--out-dir", str(out_dir)])
            print(f"seed {seed}: completed in {time.time() - t0:.1f}s")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
