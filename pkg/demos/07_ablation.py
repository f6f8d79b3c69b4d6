"""Compare the three similarity variants over a few seeds.

A reduced phantom keeps this to about a minute. The full 8-seed run at
64x64x32 is `mastoidseg ablation --seeds 0 1 2 3 4 5 6 7`.
"""
import csv
from pathlib import Path

from mastoidseg.pipeline import PipelineConfig, run_ablation

cfg = PipelineConfig.from_dict({"version": 1, "phantom": {"dims": [32, 32, 16]},
                                "optimizer": {"max_iters": 100}})
out = Path("demo_out/ablation")
rows = run_ablation(cfg, [0, 1, 2], out)

for r in rows:
    print(f"{r['variant']:12s} seed {r['seed']}  dice {r['dice']:.3f}  hd95 {r['hd95']:.2f}"
          f"  {r['status']}")

print()
with open(out / "ablation_summary.csv") as fh:
    for r in csv.DictReader(fh):
        if r["stat"] == "mean":
            print(f"{r['variant']:12s} mean dice {float(r['dice']):.3f} over {r['n']} runs")
