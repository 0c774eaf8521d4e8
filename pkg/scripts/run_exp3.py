"""Three-subnetwork spacetime model on exp3 (144 random sensors -> 3600 queries).

    python3 scripts/run_exp3.py 
"""

import argparse

from _common import progress, save_outcome
from sropnet.presets import run_exp3

p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
p.add_argument("--n-train", type=int, default=512)
p.add_argument("--n-test", type=int, default=64)
p.add_argument("--epochs", type=int, default=150)
p.add_argument("--queries", type=int, default=300, help="query points drawn per sample and step")
p.add_argument("--out")
args = p.parse_args()

res = run_exp3(args.n_train, args.n_test, args.epochs, args.queries, callback=progress(10))
agg = res.report.aggregate["relative_l2"]
idw = res.baseline_mean("idw_scattered")
print(f"SROpNet relative L2: mean {agg['mean']:.4f}  median {agg['median']:.4f}  max {agg['max']:.4f}")
print(f"IDW relative L2:     mean {idw:.4f}")
print(f"best epoch {res.result.best_epoch}, training {res.result.seconds:.0f}s")
save_outcome(args.out, "exp3", res, {"mean": agg["mean"], "idw": idw})
