"""Model-selection study: generate data from one error law, fit SLn/SLt/SLcn,
tally which model each criterion prefers.

    python3 scripts/selection_study.py --error normal --n 400 --replicates 10
"""
import argparse
import json
import sys
import time
from pathlib import Path

from heckman_smn.nuts import SamplerConfig
from heckman_smn.sim_gen import SimConfig, parse_error_family, run_replication


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--error", default="normal", help="normal | t | slash | cn")
    ap.add_argument("--nu", type=float, default=None, help="t df or slash parameter")
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--warmup", type=int, default=1000)
    ap.add_argument("--draws", type=int, default=2000)
    ap.add_argument("--thin", type=int, default=1)
    ap.add_argument("--models", default="normal,t,cn")
    ap.add_argument("--out", type=Path, default=None, help="directory for report.json / table.csv")
    args = ap.parse_args(argv)

    cfg = SimConfig(n=args.n, error_family=parse_error_family(args.error, args.nu),
                    replicates=args.replicates, seed=args.seed)
    scfg = SamplerConfig(warmup=args.warmup, draws=args.draws, thin=args.thin)
    t0 = time.time()

    def progress(i, m):
        print(f"[{time.time() - t0:7.1f}s] replicate {i} model {m}", file=sys.stderr, flush=True)

    rep = run_replication(cfg, args.models.split(","), scfg, progress=progress)
    for row in rep.table():
        print(f"{row['model']:<5} {row['parameter']:<7} ME {row['ME']:8.3f} SD {row['SD']:6.3f} "
              f"HPD [{row['HPD_lower']:7.3f}, {row['HPD_upper']:7.3f}]")
    print(json.dumps(rep.mean_criteria(), indent=1))
    print(json.dumps(rep.selection_percentages(), indent=1))
    print(f"failures: {rep.n_failures}; elapsed {time.time() - t0:.0f}s")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        rep.to_json(args.out / "report.json")
        rep.to_csv(args.out / "table.csv")


if __name__ == "__main__":
    main()
