"""Maximal Lindeberg sums for i.i.d. Gaussian rows across row lengths.

Usage: python scripts/lindeberg_trend.py [--n 1000 10000 100000] [--eps 0.1]
       [--reps 5000] [--A 8] [--seed 0]
"""
import argparse
import math
import os

from fcltlab.blocks import construct_rho_blocks
from fcltlab.fclt import lindeberg_max_report
from fcltlab.models import ExactOracle, iid_model
from fcltlab.subexp import SubexpSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, nargs="+", default=[10**3, 10**4, 10**5])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.1])
    ap.add_argument("--reps", type=int, default=5000)
    ap.add_argument("--A", type=float, default=8.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    spec = SubexpSpec.power(1.0)
    print("n,u_n,max_block_scale_over_sigma,eps,L2,L2_se,L1,L1_se")
    for n in args.n:
        model = iid_model(n)
        oracle = ExactOracle(model)
        part = construct_rho_blocks(oracle, spec, args.A)
        rep = lindeberg_max_report(model, part, args.eps, args.reps, args.seed,
                                   args.workers, oracle=oracle)
        top = max(part.scales()) * args.A / math.sqrt(oracle.sigma_profile()[-1])
        for i, e in enumerate(rep.eps_list):
            print(f"{n},{part.u_n},{top:.4f},{e:g},{rep.L2[i]:.5f},{rep.L2_se[i]:.5f},"
                  f"{rep.L1[i]:.5f},{rep.L1_se[i]:.5f}")


if __name__ == "__main__":
    main()
