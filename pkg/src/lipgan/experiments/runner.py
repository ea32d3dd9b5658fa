"""Execute experiment specs and write their artifacts.

Each run owns ``<root>/<name>-seed<seed>/``:

* ``metrics.csv``: one :class:`~lipgan.metrics.MetricsRecord` per row
* ``summary.json``: final aggregates and check results, recomputed from
  ``metrics.csv`` after it is written
* ``config.echo.json``: the fully resolved spec
* ``critic.json`` (and ``generator.json`` for GANs): checkpoints
* ``field.csv`` / ``field.svg`` for 2-D data, ``paths.csv`` for increment paths

The root is ``spec.output_dir`` unless ``LIPGAN_OUTPUT_ROOT`` is set.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..gan import TrainingDiverged, fit_discriminator, mixture_sampler, ring_centers, train_gan
from ..metrics import SCHEMA_VERSION, MetricsRecord, read_csv, write_csv
from ..transport import exact_w1, load_cloud
from .checks import summarize
from .fields import export_gradient_field, export_increment_path, increment_eps_grid, write_field_csv, write_field_svg
from .spec import ExperimentSpec

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "LIPGAN_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_DIVERGED = 2
EXIT_CHECK_FAILED = 3


@dataclass
class RunOutcome:
    spec_name: str
    out_dir: Path
    exit_code: int
    summary: dict = field(default_factory=dict)


def output_dir(spec: ExperimentSpec, root: str | Path | None = None) -> Path:
    root = root if root is not None else os.environ.get(OUTPUT_ROOT_ENV) or spec.output_dir
    return Path(root) / f"{spec.name}-seed{spec.seed}"


def make_clouds(spec: ExperimentSpec, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    d = spec.data
    if d.real is not None:
        return np.array(d.real, dtype=np.float64), np.array(d.fake, dtype=np.float64)
    if d.real_file is not None:
        real, fake = load_cloud(d.real_file), load_cloud(d.fake_file)
        if real.shape != fake.shape:
            raise ValueError(f"clouds differ in shape: {real.shape} vs {fake.shape}")
        return real, fake
    seed = (d.instance_seed if d.instance_seed is not None else spec.seed) + offset
    rng = np.random.default_rng(seed)
    real = rng.uniform(d.low, d.high, (d.points, d.dim))
    if d.fake_distribution == "normal":
        fake = rng.standard_normal((d.points, d.dim))
    else:
        fake = rng.uniform(d.low, d.high, (d.points, d.dim))
    return real, fake


def _train_config(spec: ExperimentSpec, **regularizer):
    reg = spec.train.regularizer.model_copy(update=regularizer)
    return spec.train.model_copy(update={"seed": spec.seed, "regularizer": reg})


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2) + "\n")


def _field_artifacts(spec, critic_params, out: Path, real, fake) -> None:
    if not spec.field.enabled or real.shape[1] != 2:
        return
    pts = np.concatenate([real, fake])
    pad = spec.field.padding
    box = (pts[:, 0].min() - pad, pts[:, 0].max() + pad, pts[:, 1].min() - pad, pts[:, 1].max() + pad)
    rows = export_gradient_field(nn.critic(critic_params), box, spec.field.resolution)
    write_field_csv(rows, out / "field.csv")
    write_field_svg(rows, out / "field.svg", real, fake)


def increment_paths(f, real, fake, n_eps: int = 32) -> tuple[list[dict], list[list]]:
    """Follow ``x + eps * grad f(x)`` from every fake point.

    Returns per-point results (matched vs nearest real index) and flat CSV rows.
    """
    _, plan = exact_w1(real, fake)
    # matching maps real i -> fake plan.matching[i]; invert it for fake points
    real_of_fake = np.empty(len(fake), dtype=int)
    real_of_fake[plan.matching] = np.arange(len(real))
    results, rows = [], []
    for j, x in enumerate(fake):
        i = int(real_of_fake[j])
        path = export_increment_path(f, x, increment_eps_grid(np.linalg.norm(real[i] - x), n_eps), real)
        results.append({"fake": j, "matched_real": i, "nearest_real": path.nearest,
                        "hit": path.nearest == i and not path.degenerate, "degenerate": path.degenerate})
        rows.extend([j, *r] for r in path.rows())
    return results, rows


def _write_paths(rows, dim: int, n_real: int, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fake", "eps", *[f"x{k}" for k in range(dim)], *[f"d_real{k}" for k in range(n_real)]])
        for r in rows:
            w.writerow([r[0], *(repr(float(v)) for v in r[1:])])


def _execute(spec: ExperimentSpec, out: Path) -> tuple[list[MetricsRecord], dict]:
    """Train according to the scenario; returns metrics and scenario extras."""
    extras: dict = {}
    records: list[MetricsRecord] = []
    sc = spec.scenario
    if sc in ("toy2d", "toycloud", "lambda_track"):
        real, fake = make_clouds(spec)
        params, records, state = fit_discriminator(real, fake, _train_config(spec))
        nn.save_checkpoint(params, out / "critic.json")
        _field_artifacts(spec, params, out, real, fake)
        if sc != "lambda_track":
            results, rows = increment_paths(nn.critic(params), real, fake, spec.increment_points)
            _write_paths(rows, real.shape[1], len(real), out / "paths.csv")
            extras["increment_paths"] = {
                "hits": sum(r["hit"] for r in results),
                "points": len(results),
                "per_point": results,
            }
    elif sc == "kstar_sweep":
        real, fake = make_clouds(spec)
        for rho in spec.rhos:
            name = f"rho={rho:g}"
            try:
                _, recs, _ = fit_discriminator(real, fake, _train_config(spec, rho=rho), run=name)
            except TrainingDiverged as exc:
                exc.records = records + exc.records
                raise
            records.extend(recs)
    elif sc == "sn_compare":
        for i in range(spec.instances):
            real, fake = make_clouds(spec, offset=i)
            for method in spec.methods:
                name = f"{method}/i{i}"
                try:
                    _, recs, _ = fit_discriminator(real, fake, _train_config(spec, kind=method), run=name)
                except TrainingDiverged as exc:
                    exc.records = records + exc.records
                    raise
                records.extend(recs)
    elif sc == "gan2d":
        d = spec.data
        centers = ring_centers(d.modes, d.radius)
        result = train_gan(_train_config(spec), mixture_sampler(centers, d.std), eval_size=d.eval_size)
        records = result.records
        nn.save_checkpoint(result.discriminator, out / "critic.json")
        nn.save_checkpoint(result.generator, out / "generator.json")
        extras["updates"] = {"discriminator": result.d_updates, "generator": result.g_updates}
        if spec.field.enabled:
            rows = export_gradient_field(nn.critic(result.discriminator), (-1.2, 1.2, -1.2, 1.2), spec.field.resolution)
            write_field_csv(rows, out / "field.csv")
            write_field_svg(rows, out / "field.svg", centers)
    else:  # pragma: no cover - the schema rejects anything else
        raise ValueError(f"unknown scenario {sc}")
    return records, extras


def run_spec(spec: ExperimentSpec, root: str | Path | None = None) -> RunOutcome:
    out = output_dir(spec, root)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("metrics.csv", "summary.json", "field.csv", "field.svg", "paths.csv"):
        (out / stale).unlink(missing_ok=True)
    echo = {"metrics_schema": SCHEMA_VERSION, "output_dir": str(out), "spec": spec.resolved()}
    _write_json(echo, out / "config.echo.json")
    log.info("running %s (%s) -> %s", spec.name, spec.scenario, out)
    status, message = "completed", None
    try:
        records, extras = _execute(spec, out)
    except TrainingDiverged as exc:
        records, extras = exc.records, {}
        status, message = "diverged", str(exc)
        log.error("%s diverged: %s", spec.name, exc)
    write_csv(records, out / "metrics.csv")
    summary = summarize(read_csv(out / "metrics.csv"), spec)
    summary["status"] = status
    if message:
        summary["error"] = message
    summary.update(extras)
    _write_json(summary, out / "summary.json")
    if status == "diverged":
        code = EXIT_DIVERGED
    elif not summary["passed"]:
        code = EXIT_CHECK_FAILED
    else:
        code = EXIT_OK
    return RunOutcome(spec.name, out, code, summary)


def _run_one(args) -> RunOutcome:
    spec, root = args
    return run_spec(spec, root)


def run_many(specs: list[ExperimentSpec], root=None, jobs: int = 1) -> list[RunOutcome]:
    """Run independent specs, optionally in worker processes (one spec per worker)."""
    if jobs <= 1 or len(specs) <= 1:
        return [run_spec(s, root) for s in specs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(s, root) for s in specs]))


REPORT_COLUMNS = ["dir", "name", "scenario", "seed", "status", "passed", "check", "run", "check_passed", "value", "threshold"]


def collect_report(dirs) -> list[dict]:
    """One row per (run directory, check, run); directories without checks get one row."""
    rows = []
    for d in dirs:
        d = Path(d)
        summary_path = d / "summary.json"
        if not summary_path.is_file():
            raise FileNotFoundError(f"{d}: no summary.json")
        s = json.loads(summary_path.read_text())
        base = {"dir": str(d), "name": s.get("name"), "scenario": s.get("scenario"), "seed": s.get("seed"),
                "status": s.get("status"), "passed": s.get("passed")}
        emitted = False
        for check, result in s.get("checks", {}).items():
            for run, detail in result.get("runs", {}).items():
                rows.append({**base, "check": check, "run": run, "check_passed": detail.get("passed"),
                             "value": detail.get("value"), "threshold": detail.get("threshold")})
                emitted = True
        if not emitted:
            rows.append({**base, "check": "", "run": "", "check_passed": "", "value": "", "threshold": ""})
    return rows


def write_report(rows: list[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in REPORT_COLUMNS})
