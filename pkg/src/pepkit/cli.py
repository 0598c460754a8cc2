"""Experiment harness: ``pepkit <subcommand> --spec FILE [--seed N] [--out DIR]``.

Each subcommand reads a JSON experiment spec, evaluates a parameter grid with the
library operations and writes a CSV table (plus JSON-lines traces where useful)
into ``--out``.  ``pepkit report --out DIR`` turns those tables into pass/fail lines.

Exit codes: 0 success, 1 failed check (report only), 2 bad input or missing artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import cert as C
from .descent import DescentConfig, RandomCone, run, worst_case_one_step
from .entropic import (
    BoltzmannModel,
    ExactOracle,
    IpmConfig,
    ProximityError,
    Sampled,
    boltzmann_mean,
    chain_mean_band,
    hit_and_run,
    ipm_run,
)
from .funcs import Box, QuadraticFunction
from .pep import ExactLineSearch, FixedStep, PepInstance, Variant, build
from .sdpsolve import solve

KINDS = {
    "pep": "PepSweep",
    "cert": "CertIdentity",
    "descent": "DescentSweep",
    "ipm": "IpmRun",
    "sample": "SamplerCheck",
}
TABLES = {"pep": "pep.csv", "cert": "cert.csv", "descent": "descent.csv", "ipm": "ipm.csv", "sample": "sample.csv"}


class SpecError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return v


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_table(rows: list[dict], path: Path) -> None:
    cols = list(rows[0]) if rows else []
    for r in rows:
        cols += [k for k in r if k not in cols]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(_fmt(r.get(c, ""))) for c in cols))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# experiments


def _step_rules(kappa, eps, spec):
    """Named step rules for one grid point; fixed-step fractions refer to gamma_max."""
    out = []
    for s in spec.get("steps", ["els"]):
        if s == "els":
            out.append(("els", ExactLineSearch(), None))
        else:
            frac = float(s)
            gmax = C.fixed_gamma_max(kappa, 1.0, eps)
            out.append((f"gamma_max*{s}", FixedStep(frac * gmax), frac * gmax))
    return out


def _analytic(variant, rule, kappa, eps):
    """SDP optimum predicted by the rates (squared ratios for gradient and distance)."""
    r = C.rate_els(kappa, eps) if isinstance(rule, ExactLineSearch) else C.rate_fixed(kappa, 1.0, eps, rule.gamma)
    return {"function_value": r.f_rate, "gradient_norm": r.g_rate**2, "distance": r.x_rate**2}[variant]


def run_pep(spec, seed):
    rows = []
    for kappa in spec["kappas"]:
        for eps in spec["eps"]:
            for name, rule, gamma in _step_rules(kappa, eps, spec):
                for variant in spec.get("variants", ["gradient_norm", "distance", "function_value"]):
                    row = {"kappa": kappa, "eps": eps, "step": name, "gamma": gamma if gamma is not None else "", "variant": variant}
                    try:
                        inst = PepInstance(Variant(variant), rule, kappa, 1.0, eps)
                        if isinstance(rule, ExactLineSearch):
                            if eps > C.els_eps_max(kappa) + 1e-15:
                                raise C.GateError("eps <= 2 sqrt(kappa)/(1+kappa)", eps)
                        elif eps > 2 * kappa / (1 + kappa):
                            raise C.GateError("eps <= 2 kappa/(1+kappa)", eps)
                        analytic = _analytic(variant, rule, kappa, eps)
                        sol = solve(build(inst))
                        gap = abs(sol.objective_value - analytic) / max(abs(analytic), 1e-12)
                        row.update(analytic=analytic, sdp=sol.objective_value, rel_gap=gap, status=sol.status.name, gate="")
                    except (C.GateError, ValueError) as exc:
                        row.update(analytic="", sdp="", rel_gap="", status="GATED", gate=str(exc))
                    rows.append(row)
    return rows


def run_cert(spec, seed):
    families = spec.get("families", list(C.FAMILIES))
    rows = C.certificate_sweep(spec.get("n_draws", 10), spec.get("n_points", 1000), seed, families)
    return [{k: r[k] for k in C.SWEEP_COLUMNS} for r in rows]


def run_descent(spec, seed):
    rows = []
    targets = spec.get("targets", ["gradient", "f_gap"])
    for kappa in spec["kappas"]:
        for eps in spec["eps"]:
            for name, rule, gamma in _step_rules(kappa, eps, spec):
                if isinstance(rule, ExactLineSearch) and eps > C.els_eps_max(kappa):
                    continue
                if isinstance(rule, FixedStep) and eps > 2 * kappa / (1 + kappa):
                    continue
                rates = C.rate_els(kappa, eps) if isinstance(rule, ExactLineSearch) else C.rate_fixed(kappa, 1.0, eps, rule.gamma)
                for target in targets:
                    rate = {"gradient": rates.g_rate, "distance": rates.x_rate, "f_gap": rates.f_rate}[target]
                    kind = {"gradient": "g", "distance": "x", "f_gap": "f"}[target]
                    q = QuadraticFunction.with_spectrum(
                        np.concatenate([[kappa, 1.0], np.random.default_rng(seed).uniform(kappa, 1.0, spec.get("dim", 5) - 2)]),
                        np.random.default_rng(seed),
                    )
                    worst_random = 0.0
                    for r in range(spec.get("n_runs", 5)):
                        x0 = np.random.default_rng([seed, r]).normal(size=q.dim)
                        cfg = DescentConfig(rule, eps, RandomCone(seed * 1000 + r), max_iter=spec.get("max_iter", 30))
                        worst_random = max(worst_random, run(q, x0, cfg).max_ratio(kind))
                    adv, _ = worst_case_one_step(kappa, 1.0, eps, rule, target, n_starts=spec.get("n_starts", 90))
                    rows.append(
                        {
                            "kappa": kappa,
                            "eps": eps,
                            "step": name,
                            "target": target,
                            "rate": rate,
                            "max_ratio_random": worst_random,
                            "adversarial_ratio": adv,
                            "sharpness": adv / rate,
                            "sound": max(worst_random, adv) <= rate + 1e-9,
                        }
                    )
    return rows


def run_ipm(spec, seed, out: Path):
    rows = []
    n = spec.get("n", 2)
    box = Box(np.zeros(n), np.ones(n))
    th = np.asarray(spec.get("theta_hat", [1.0] + [0.0] * (n - 1)), float)
    seeds = spec.get("seeds", [seed])
    for s in seeds:
        mode = Sampled(seed=int(s), N=spec.get("N")) if spec.get("mode", "exact") == "sampled" else ExactOracle()
        cfg = IpmConfig(
            th, box, spec.get("eta0", 1.0), eps_hat=spec.get("eps_hat", 0.0), eps_prime=spec.get("eps_prime", 0.0),
            eps_bar=spec.get("eps_bar", 1e-3), delta=spec.get("delta", 0.25), mode=mode,
        )
        row = {"seed": s, "mode": spec.get("mode", "exact"), "n": n}
        try:
            tr = ipm_run(cfg)
            failure = ""
        except ProximityError as exc:
            tr, failure = exc.trace, str(exc)
        tr.to_jsonl(out / f"ipm_trace_{s}.jsonl")
        ok = (
            not failure
            and tr.max_proximity() <= cfg.delta / 2
            and tr.iterations <= tr.ceiling
            and tr.gap is not None
            and tr.gap <= cfg.eps_bar
        )
        row.update(
            iterations=tr.iterations, ceiling=tr.ceiling, max_proximity=tr.max_proximity(),
            gap=tr.gap if tr.gap is not None else "", eps_bar=cfg.eps_bar, failure=failure, ok=ok,
        )
        rows.append(row)
    return rows


def run_sample(spec, seed):
    rows = []
    n = spec.get("n", 2)
    box = Box(np.zeros(n), np.ones(n))
    chains = spec.get("n_chains", 100)
    for theta in spec.get("thetas", [[0.0] * n, [1.0] + [0.0] * (n - 1)]):
        theta = np.asarray(theta, float)
        S = hit_and_run(BoltzmannModel(box, theta), box.center, count=spec.get("N", 10000), seed=seed, n_chains=chains)
        mean, se = chain_mean_band(S, chains)
        exact = boltzmann_mean(box, theta)
        for i in range(n):
            z = (mean[i] - exact[i]) / se[i]
            rows.append({"theta": json.dumps(theta.tolist()), "coord": i, "mean": mean[i], "exact": exact[i], "se": se[i], "z": z})
    return rows


RUNNERS = {"pep": run_pep, "cert": run_cert, "descent": run_descent, "sample": run_sample}


def run_experiment(command: str, spec: dict, seed: int, out: Path) -> Path:
    """Run one experiment and write its table; returns the table path."""
    kind = spec.get("kind", KINDS[command])
    if kind != KINDS[command]:
        raise SpecError(f"spec kind {kind!r} does not match subcommand {command!r}")
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ipm(spec, seed, out) if command == "ipm" else RUNNERS[command](spec, seed)
    path = out / TABLES[command]
    write_table(rows, path)
    return path


# ---------------------------------------------------------------------------
# report


def _num(v):
    return float(v) if v not in ("", None) else math.nan


CHECKS = {
    "pep.csv": ("PepSweep rel_gap <= 1e-4", lambda r: r["status"] == "GATED" or _num(r["rel_gap"]) <= 1e-4),
    "cert.csv": ("CertIdentity max_residual <= 1e-9", lambda r: _num(r["max_residual"]) <= 1e-9),
    "descent.csv": ("DescentSweep ratios <= rate + 1e-9", lambda r: r["sound"] == "true"),
    "ipm.csv": ("IpmRun invariants", lambda r: r["ok"] == "true"),
    "sample.csv": ("SamplerCheck |z| <= 3", lambda r: abs(_num(r["z"])) <= 3),
}


def report(out: Path, stream=sys.stdout) -> int:
    if not out.is_dir():
        print(f"error: no artifact directory {out}", file=stream)
        return 2
    found = [name for name in CHECKS if (out / name).exists()]
    if not found:
        print(f"error: no artifacts in {out}", file=stream)
        return 2
    failed = False
    for name in found:
        label, check = CHECKS[name]
        rows = read_table(out / name)
        bad = [i for i, r in enumerate(rows) if not check(r)]
        status = "PASS" if rows and not bad else "FAIL"
        failed |= status == "FAIL"
        print(f"{status}  {label}  ({len(rows) - len(bad)}/{len(rows)} rows)", file=stream)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="pepkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in KINDS:
        s = sub.add_parser(name)
        s.add_argument("--spec", required=True, type=Path)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", type=Path, default=Path("artifacts"))
    r = sub.add_parser("report")
    r.add_argument("--out", type=Path, default=Path("artifacts"))
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        return report(args.out)
    try:
        spec = json.loads(args.spec.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read spec: {exc}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    try:
        path = run_experiment(args.command, spec, seed, args.out)
    except (SpecError, KeyError, TypeError) as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
