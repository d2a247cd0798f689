"""Ratio-lemma quotients for the example subexponential families.

Prints ``sum a_j^p / (sum a_j^2)^{p/2}`` divided by ``H(u)^{p/2-1}`` on a
grid of ``u`` together with the spread (max over min) of each row.

Usage: python scripts/ratio_table.py [--p 3 4] [--u 100 1000 10000 100000]
"""
import argparse

from fcltlab.subexp import SubexpSpec, ratio_lemma

FAMILIES = [
    {"family": "power", "q": 1},
    {"family": "explogpow", "s": 2},
    {"family": "stretched", "c": 1, "alpha": 0.5},
    {"family": "iterlog", "d": 1},
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--p", type=float, nargs="+", default=[3.0, 4.0])
    ap.add_argument("--u", type=int, nargs="+", default=[10**2, 10**3, 10**4, 10**5])
    args = ap.parse_args()
    print("family,p," + ",".join(f"u={u}" for u in args.u) + ",spread")
    for raw in FAMILIES:
        spec = SubexpSpec.from_dict(raw)
        for p in args.p:
            q = [ratio_lemma(spec, p, u).quotient for u in args.u]
            print(f"{spec.family},{p:g}," + ",".join(f"{v:.6g}" for v in q)
                  + f",{max(q) / min(q):.4f}")


if __name__ == "__main__":
    main()
