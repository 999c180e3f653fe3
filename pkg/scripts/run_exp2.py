"""Grasp-and-insert benchmark: composed object-centric priors against two baselines."""
import argparse
import sys

from ebmprior.bench.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="configs/exp2.json")
    p.add_argument("--out", default="runs/exp2")
    a = p.parse_args()
    sys.exit(main(["run", "--config", a.config, "--out", a.out, "-v"]))
