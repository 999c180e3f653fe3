"""Count homotopy classes found by Multi-StochGPMP in the two-disc corridor."""
import argparse

from ebmprior.bench.corridor import CorridorConfig, multimodality_rate

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--init-scale", type=float, default=4.0)
    a = p.parse_args()
    rate, per_seed = multimodality_rate(range(a.seeds), CorridorConfig(init_scale=a.init_scale))
    for s, classes in enumerate(per_seed):
        print(f"seed {s:>3}: {len(classes)} successful plans, classes {sorted(set(classes))}")
    print(f"seeds with >= 2 classes: {rate:.2f}")
