"""Command-line experiment runner.

``fcltlab <command> --config PATH [--seed S] [--workers N] [--out DIR]``

Commands: ``blocks``, ``fclt``, ``mixing``, ``subexp-check``, ``delta`` and
``report`` (all configured sections in one run).  Exit codes: 0 success,
2 violated precondition, 3 tolerance failure, 4 internal invariant breach.
Every CSV starts with a ``# config_sha256=... seed=...`` line and every JSON
report carries the same two fields, so outputs trace back to their config.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from ._numerics import PreconditionError
from .blocks import (construct_projective_blocks, construct_rho_blocks, rho_sum_hypothesis,
                     verify_regularity)
from .config import ConfigError, load_config
from .fclt import bm_statistics, build_paths, lindeberg_max_report, time_change
from .mixing import alpha_sum_bound, coefficient_profile, delta_with_provenance
from .models import ExactOracle, write_matrix
from .subexp import SubexpSpec, check_def1, ratio_lemma

EXIT_OK, EXIT_PRECONDITION, EXIT_TOLERANCE, EXIT_INVARIANT = 0, 2, 3, 4
RHO_SUM_LIMIT = 0.25
DELTA_LIMIT = 0.25


class InvariantError(RuntimeError):
    """A relation that must hold by construction was found broken."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    return obj


class Run:
    """Output directory, header and message sink shared by the commands."""

    def __init__(self, cfg, out: Path, workers: int):
        self.cfg = cfg
        self.out = Path(out)
        self.workers = workers
        self.out.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, body_fn) -> Path:
        path = self.out / name
        with open(path, "w", newline="\n") as fh:
            fh.write(body_fn(self.cfg.header()))
        return path

    def write_json(self, name: str, doc: dict) -> Path:
        full = {"config_sha256": self.cfg.hash, "seed": self.cfg.seed}
        full.update(_jsonable(doc))
        path = self.out / name
        with open(path, "w", newline="\n") as fh:
            fh.write(json.dumps(full, indent=2) + "\n")
        return path

    @staticmethod
    def warn(msg: str) -> None:
        print(f"warning: {msg}", file=sys.stderr)


def _partition(cfg, model, oracle):
    sec = cfg.blocks
    if sec["scheme"] == "rho":
        return construct_rho_blocks(oracle, SubexpSpec.from_dict(sec["subexp"]), sec["A"])
    return construct_projective_blocks(oracle, sec["A"], sec["eps"], sec["r"])


def _hypotheses(cfg, model, partition) -> dict:
    """Mixing hypotheses behind the block constants, enforced per config."""
    sec = cfg.blocks
    if sec["scheme"] == "rho":
        total, prov = rho_sum_hypothesis(model, partition)
        info = {"rho_sum": total, "rho_sum_provenance": prov}
        if sec["strict_hypotheses"] and total > RHO_SUM_LIMIT:
            raise PreconditionError(f"Σρ(a_j) = {total:.4g} > 1/4 ({prov.value})")
        return info
    d, prov = delta_with_provenance(model, sec["r"])
    if not d < DELTA_LIMIT:
        raise PreconditionError(f"δ_n({sec['r']}) = {d:.4g} is not below 1/4 ({prov.value})")
    return {"delta_r": d, "delta_r_provenance": prov}


def cmd_blocks(run: Run) -> int:
    cfg = run.cfg
    if cfg.blocks is None:
        raise ConfigError("blocks section is required")
    code = EXIT_OK
    doc = {"command": "blocks", "runs": []}
    for n, model in cfg.models():
        oracle = ExactOracle(model)
        part = _partition(cfg, model, oracle)
        for w in part.warnings:
            run.warn(w)
        hyp = _hypotheses(cfg, model, part)
        rep = verify_regularity(part, oracle, cfg.blocks["pair_budget"], cfg.seed)
        if not part.tiles():
            raise InvariantError(f"partition for n={n} does not tile 1..n")
        run.write_csv(f"partition_n{n}.csv", part.to_csv)
        doc["runs"].append({"n": n, "hypotheses": hyp, "regularity": rep.to_dict()})
        if not rep.passed:
            failed = [k for k, c in rep.checks.items() if not c.passed]
            print(f"n={n}: constant checks failed: {', '.join(failed)}", file=sys.stderr)
            code = EXIT_TOLERANCE
    run.write_json("blocks.json", doc)
    return code


def cmd_fclt(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.fclt
    if sec is None:
        raise ConfigError("fclt section is required")
    if sec["reps"] < 1000:
        raise PreconditionError(f"fclt.reps = {sec['reps']} < 1000: underpowered KS test")
    code = EXIT_OK
    doc = {"command": "fclt", "runs": []}
    for n, model in cfg.models():
        oracle = ExactOracle(model)
        table = time_change(oracle, grid=sec["grid"])
        ens = build_paths(model, sec["grid"], sec["reps"], cfg.seed, run.workers, oracle=oracle)
        stats_ = bm_statistics(ens)
        entry = {"n": n, "model_id": ens.model_id, "bm": stats_.summary()}
        if sec["write_ensemble"]:
            write_matrix(run.out / f"ensemble_n{n}.bin", ens.paths)
            entry["ensemble_file"] = f"ensemble_n{n}.bin"
        run.write_csv(f"time_change_n{n}.csv", table.to_csv)
        run.write_csv(f"covariance_n{n}.csv", stats_.cov_csv)
        if cfg.blocks is not None:
            part = _partition(cfg, model, oracle)
            lind = lindeberg_max_report(model, part, sec["eps_list"], sec["lindeberg_reps"],
                                        cfg.seed, run.workers, oracle=oracle)
            run.write_csv(f"lindeberg_n{n}.csv", lind.to_csv)
            entry["lindeberg"] = {"u_n": part.u_n, "eps": lind.eps_list, "L2": lind.L2, "L1": lind.L1}
        failures = []
        if stats_.ks_at_1 > sec["ks_tol"]:
            failures.append(f"ks_at_1 = {stats_.ks_at_1:.4g} > {sec['ks_tol']}")
        if stats_.max_cov_dev > sec["cov_tol"]:
            failures.append(f"max_cov_dev = {stats_.max_cov_dev:.4g} > {sec['cov_tol']}")
        entry["failures"] = failures
        if failures:
            print(f"n={n}: " + "; ".join(failures), file=sys.stderr)
            code = EXIT_TOLERANCE
        doc["runs"].append(entry)
    run.write_json("fclt.json", doc)
    return code


def cmd_mixing(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.mixing or {"lags": list(range(1, min(10, min(cfg.n_list) - 1) + 1)),
                         "scope": "single", "window": 2}
    doc = {"command": "mixing", "runs": []}
    broken = []
    for n, model in cfg.models():
        prof = coefficient_profile(model, sec["lags"], scope=sec["scope"], window=sec["window"])
        run.write_csv(f"mixing_n{n}.csv", prof.to_csv)
        viol = prof.ordering_violations()
        doc["runs"].append({"n": n, "ordering_violations": viol})
        if not prof.rho_le_2sqrt_phi():
            broken.append(f"n={n}: rho > 2 sqrt(phi)")
    run.write_json("mixing.json", doc)
    if broken:
        raise InvariantError("; ".join(broken))
    return EXIT_OK


def cmd_subexp_check(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.subexp
    if sec is None:
        raise ConfigError("subexp section is required")
    rows, summary, code = [], [], EXIT_OK
    for raw in sec["specs"]:
        spec = SubexpSpec.from_dict(raw)
        d1 = check_def1(spec)
        item = {"spec": spec.to_dict(), "def1": {"cond1": d1.cond1, "cond2": d1.cond2, "cond3": d1.cond3,
                                                 "C1": d1.C1, "C2": d1.C2}, "spread": {}}
        if not d1.all_pass:
            code = EXIT_TOLERANCE
        for p in sec["p_list"]:
            q = []
            for u in sec["u_list"]:
                res = ratio_lemma(spec, p, u)
                q.append(res.quotient)
                rows.append((spec.family, p, u, res.ratio, res.bound_unit, res.quotient))
            spread = max(q) / min(q)
            item["spread"][repr(p)] = spread
            if spread > sec["max_spread"]:
                code = EXIT_TOLERANCE
        summary.append(item)

    def body(header):
        lines = [header, "family,p,u,ratio,bound_unit,quotient"]
        lines += [f"{f},{p!r},{u},{r!r},{b!r},{q!r}" for f, p, u, r, b, q in rows]
        return "\n".join(lines) + "\n"

    run.write_csv("ratio_lemma.csv", body)
    run.write_json("subexp.json", {"command": "subexp-check", "specs": summary})
    return code


def cmd_delta(run: Run) -> int:
    cfg = run.cfg
    sec = cfg.delta or {"m": [1, 2, 3], "window": 64, "q": 4.0, "C_q": 4.0, "A_q": 1.0}
    doc = {"command": "delta", "runs": []}
    for n, model in cfg.models():
        K = min(max(max(sec["m"]) + 10, 20), n - 1)
        prof = coefficient_profile(model, list(range(1, K + 1)))
        rows = []
        for m in sec["m"]:
            d, prov = delta_with_provenance(model, m, window=sec["window"])
            try:
                bound = alpha_sum_bound(prof, max(m, 1), sec["q"], sec["C_q"], sec["A_q"])
            except ValueError:
                bound = math.nan
            rows.append((m, d, prov.value, bound))

        def body(header, rows=rows):
            lines = [header, "m,delta,provenance,alpha_sum_bound"]
            lines += [f"{m},{d!r},{p},{b!r}" for m, d, p, b in rows]
            return "\n".join(lines) + "\n"

        run.write_csv(f"delta_n{n}.csv", body)
        doc["runs"].append({"n": n, "delta": {str(m): {"value": d, "provenance": p, "alpha_sum_bound": b}
                                              for m, d, p, b in rows}})
    run.write_json("delta.json", doc)
    return EXIT_OK


def cmd_report(run: Run) -> int:
    cfg = run.cfg
    codes = {}
    plan = [("subexp-check", cfg.subexp, cmd_subexp_check), ("mixing", cfg.mixing, cmd_mixing),
            ("delta", cfg.delta, cmd_delta), ("blocks", cfg.blocks, cmd_blocks),
            ("fclt", cfg.fclt, cmd_fclt)]
    for name, section, fn in plan:
        if section is not None:
            codes[name] = fn(run)
    docs = {}
    for name in codes:
        path = run.out / f"{name.split('-')[0]}.json"
        docs[name] = json.loads(path.read_text())
    run.write_json("report.json", {"command": "report", "exit_codes": codes, "sections": docs})
    return max(codes.values(), default=EXIT_OK)


COMMANDS = {
    "blocks": cmd_blocks,
    "fclt": cmd_fclt,
    "mixing": cmd_mixing,
    "subexp-check": cmd_subexp_check,
    "delta": cmd_delta,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fcltlab", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML experiment config")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default=None, help="output directory (default: config output_dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        run = Run(cfg, Path(args.out or cfg.output_dir), max(1, args.workers))
        return COMMANDS[args.command](run)
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except InvariantError as exc:
        print(f"invariant broken: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FileNotFoundError, ValueError) as exc:
        # module-level argument checks raise ValueError before any output
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
