"""Train the two-subnetwork temporal model on exp1 and compare with bicubic.

    python3 scripts/run_exp1.py --epochs 300
    python3 scripts/run_exp1.py --lr-fraction 0.5 --epochs 600   # partial LR input
"""

import argparse

from _common import progress, save_outcome
from sropnet.presets import run_exp1

p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
p.add_argument("--n-train", type=int, default=256)
p.add_argument("--n-test", type=int, default=32)
p.add_argument("--epochs", type=int, default=300)
p.add_argument("--lr-fraction", type=float, default=1.0, help="keep only this leading fraction of LR frames")
p.add_argument("--out", help="directory for report JSON and loss CSV")
args = p.parse_args()

res = run_exp1(args.n_train, args.n_test, args.epochs, lr_fraction=args.lr_fraction, callback=progress(25))
agg = res.report.aggregate["relative_l2"]
bicubic = res.baseline_mean("bicubic_grid")
print(f"SROpNet relative L2: mean {agg['mean']:.4f}  median {agg['median']:.4f}  max {agg['max']:.4f}")
print(f"bicubic relative L2: mean {bicubic:.4f}")
print(f"best epoch {res.result.best_epoch}, training {res.result.seconds:.0f}s")
save_outcome(args.out, "exp1", res, {"mean": agg["mean"], "bicubic": bicubic, "lr_fraction": args.lr_fraction})
