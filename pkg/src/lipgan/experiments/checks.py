"""Pass/fail checks and summary aggregates computed from metrics rows alone.

Nothing here touches a model, so a summary can always be recomputed offline
from ``metrics.csv``.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from ..metrics import MetricsRecord
from .spec import Tolerances


def group_runs(records: list[MetricsRecord]) -> "OrderedDict[str, list[MetricsRecord]]":
    runs: OrderedDict[str, list[MetricsRecord]] = OrderedDict()
    for r in records:
        runs.setdefault(r.run, []).append(r)
    return runs


def _finite(v) -> bool:
    return v is not None and math.isfinite(v)


def _check_prop1(rows, tol: Tolerances) -> dict:
    v = rows[-1].prop1_min_cosine
    return {"value": v, "threshold": tol.prop1_min_cosine, "passed": _finite(v) and v >= tol.prop1_min_cosine}


def _check_lemma2(rows, tol: Tolerances) -> dict:
    v = rows[-1].lemma2_max_residual
    return {"value": v, "threshold": tol.lemma2_relative, "passed": _finite(v) and v <= tol.lemma2_relative}


def _check_kstar(rows, tol: Tolerances) -> dict:
    last = rows[-1]
    k, ks = last.lipschitz_estimate, last.k_star
    if not (_finite(k) and _finite(ks)):
        return {"value": None, "predicted": ks, "threshold": tol.kstar_relative, "passed": False}
    err = abs(k / ks - 1.0)
    return {"value": k, "predicted": ks, "relative_error": err, "threshold": tol.kstar_relative,
            "passed": err <= tol.kstar_relative}


def _check_lambda(rows, tol: Tolerances) -> dict:
    """Compare ``-lam`` averaged over the final window with the oracle W1.

    The multiplier step lowers ``lam`` while the constraint is violated, so
    at equilibrium it sits at ``-W1``; the magnitude is what tracks W1.
    """
    n = max(1, int(math.ceil(tol.lambda_window * len(rows))))
    tail = [r.lam for r in rows[-n:]]
    w1 = rows[-1].w1
    if not all(_finite(v) for v in tail) or not _finite(w1) or w1 <= 0:
        return {"value": None, "w1": w1, "threshold": tol.lambda_relative, "passed": False}
    lam = float(np.mean(tail))
    err = abs(-lam - w1) / w1
    return {"value": lam, "w1": w1, "relative_error": err, "threshold": tol.lambda_relative,
            "passed": err <= tol.lambda_relative}


def _check_weak_duality(rows, tol: Tolerances) -> dict:
    worst = -math.inf
    for r in rows:
        if not (_finite(r.dual_objective) and _finite(r.w1) and _finite(r.lipschitz_estimate)):
            continue
        ratio = r.dual_objective / max(r.lipschitz_estimate, 1e-12)
        worst = max(worst, ratio - r.w1)
    if worst == -math.inf:
        return {"value": None, "threshold": tol.weak_duality, "passed": False}
    return {"value": worst, "threshold": tol.weak_duality, "passed": worst <= tol.weak_duality}


CHECKS = {
    "prop1": _check_prop1,
    "lemma2": _check_lemma2,
    "kstar": _check_kstar,
    "lambda_w1": _check_lambda,
    "weak_duality": _check_weak_duality,
}


def run_checks(records: list[MetricsRecord], checks, tol: Tolerances) -> dict:
    """``{check: {"passed": bool, "runs": {run: detail}}}``; a check passes when every run does."""
    runs = group_runs(records)
    out = {}
    for name in checks:
        per_run = {run: CHECKS[name](rows, tol) for run, rows in runs.items()}
        out[name] = {"passed": bool(per_run) and all(d["passed"] for d in per_run.values()), "runs": per_run}
    return out


def final_aggregates(records: list[MetricsRecord]) -> dict:
    """Last row of each run plus the W1 trajectory endpoints."""
    out = {}
    for run, rows in group_runs(records).items():
        last = rows[-1]
        agg = {
            "iterations": last.iteration + 1,
            "d_loss": last.d_loss,
            "dual_objective": last.dual_objective,
            "lipschitz_estimate": last.lipschitz_estimate,
            "w1": last.w1,
            "w1_initial": rows[0].w1,
            "lam": last.lam,
            "k_star": last.k_star,
            "prop1_min_cosine": last.prop1_min_cosine,
            "lemma2_max_residual": last.lemma2_max_residual,
        }
        if _finite(last.dual_objective) and _finite(last.lipschitz_estimate) and last.lipschitz_estimate > 0:
            agg["normalized_dual"] = last.dual_objective / last.lipschitz_estimate
            if _finite(last.w1) and last.w1 > 0:
                agg["dual_gap"] = abs(agg["normalized_dual"] - last.w1) / last.w1
        if _finite(rows[0].w1) and _finite(last.w1) and rows[0].w1 > 0:
            agg["w1_drop"] = 1.0 - last.w1 / rows[0].w1
        out[run] = agg
    return out


def sn_compare_report(records: list[MetricsRecord], methods) -> dict:
    """Per-method means and how often SN's dual gap exceeds MAXGP's.

    Runs are named ``<method>/<instance>``.
    """
    finals = final_aggregates(records)
    by_method: dict[str, dict[str, dict]] = {m: {} for m in methods}
    for run, agg in finals.items():
        method, _, inst = run.partition("/")
        by_method.setdefault(method, {})[inst] = agg
    table = {}
    for m, insts in by_method.items():
        gaps = [a.get("dual_gap") for a in insts.values() if _finite(a.get("dual_gap"))]
        cos = [a["prop1_min_cosine"] for a in insts.values() if _finite(a.get("prop1_min_cosine"))]
        table[m] = {
            "instances": len(insts),
            "mean_dual_gap": float(np.mean(gaps)) if gaps else None,
            "max_dual_gap": float(np.max(gaps)) if gaps else None,
            "mean_prop1_min_cosine": float(np.mean(cos)) if cos else None,
            "converged": sum(1 for a in insts.values() if _finite(a.get("prop1_min_cosine")) and a["prop1_min_cosine"] >= 0.99),
        }
    shared = sorted(set(by_method.get("sn", {})) & set(by_method.get("maxgp", {})))
    worse = [
        i for i in shared
        if _finite(by_method["sn"][i].get("dual_gap")) and _finite(by_method["maxgp"][i].get("dual_gap"))
        and by_method["sn"][i]["dual_gap"] > by_method["maxgp"][i]["dual_gap"]
    ]
    return {
        "methods": table,
        "sn_gap_exceeds_maxgp": len(worse),
        "instances_compared": len(shared),
        "fraction_sn_worse": len(worse) / len(shared) if shared else None,
    }


def summarize(records: list[MetricsRecord], spec) -> dict:
    checks = run_checks(records, spec.checks, spec.tolerances)
    summary = {
        "name": spec.name,
        "scenario": spec.scenario,
        "seed": spec.seed,
        "records": len(records),
        "final": final_aggregates(records),
        "checks": checks,
        "passed": all(c["passed"] for c in checks.values()),
    }
    if spec.scenario == "sn_compare":
        summary["sn_compare"] = sn_compare_report(records, spec.methods)
    return summary
