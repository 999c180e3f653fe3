"""Planar navigation benchmark at desk scale: data, training, evaluation, figures."""
import argparse
import sys

from ebmprior.bench.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/exp1.json")
    p.add_argument("--out", default="runs/exp1")
    p.add_argument("--fresh", action="store_true")
    a = p.parse_args()
    sys.exit(main(["run", "--config", a.config, "--out", a.out, "-v"] + (["--fresh"] if a.fresh else [])))
