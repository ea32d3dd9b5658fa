"""Experiment spec files: schema, cross-field rules and line-precise errors.

Specs are YAML documents. Every validation problem is reported against the
line of the offending key (or its closest enclosing mapping), so a bad spec
fails with ``file:line: path: message`` before any training starts.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..config import ObjectiveKind, TrainConfig

SPEC_VERSION = 1

Scenario = Literal["toy2d", "toycloud", "gan2d", "kstar_sweep", "lambda_track", "sn_compare"]
Check = Literal["prop1", "lemma2", "kstar", "lambda_w1", "weak_duality"]
Method = Literal["none", "clip", "sn", "gp", "lp", "maxgp", "maxal"]

FIT_SCENARIOS = ("toy2d", "toycloud", "kstar_sweep", "lambda_track", "sn_compare")
SN_COMPARE_REQUIRED = ("sn", "gp", "maxgp")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSpec(_Strict):
    """Where the two clouds (or the GAN target) come from.

    Explicit ``real``/``fake`` points or files win; otherwise ``points`` real
    vectors are drawn uniformly from ``[low, high]^dim`` with ``instance_seed``
    (the run seed when unset), then ``points`` fake vectors from the same
    box or, with ``fake_distribution: normal``, from a standard normal.
    """

    real: list[list[float]] | None = None
    fake: list[list[float]] | None = None
    real_file: str | None = None
    fake_file: str | None = None
    points: int = Field(2, ge=1)
    dim: int = Field(2, ge=1)
    low: float = -1.0
    high: float = 1.0
    instance_seed: int | None = None
    fake_distribution: Literal["uniform", "normal"] = "uniform"
    modes: int = Field(8, ge=1)
    radius: float = Field(0.8, gt=0)
    std: float = Field(0.05, ge=0)
    eval_size: int = Field(64, ge=2)

    @model_validator(mode="after")
    def _bounds(self):
        if not self.high > self.low:
            raise ValueError("high must exceed low")
        return self


class Tolerances(_Strict):
    prop1_min_cosine: float = Field(0.99, ge=-1, le=1)
    lemma2_relative: float = Field(0.05, ge=0)
    kstar_relative: float = Field(0.10, ge=0)
    lambda_relative: float = Field(0.05, ge=0)
    weak_duality: float = Field(1e-6, ge=0)
    # fraction of the final records averaged for the multiplier
    lambda_window: float = Field(0.1, gt=0, le=1)


class FieldSpec(_Strict):
    enabled: bool = True
    resolution: int = Field(21, ge=1)
    padding: float = Field(0.5, ge=0)


class ExperimentSpec(_Strict):
    version: Literal[1] = SPEC_VERSION
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    scenario: Scenario
    seed: int = 0
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataSpec = Field(default_factory=DataSpec)
    checks: list[Check] = Field(default_factory=list)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    rhos: list[float] = Field(default_factory=lambda: [1.0, 10.0, 100.0])
    methods: list[Method] = Field(default_factory=lambda: list(SN_COMPARE_REQUIRED))
    instances: int = Field(1, ge=1)
    increment_points: int = Field(32, ge=2)
    field: FieldSpec = Field(default_factory=FieldSpec)
    output_dir: str = "runs"

    def resolved(self) -> dict:
        """Fully expanded config, JSON-ready, as echoed next to the results.

        The training seed is the top-level one, which is what the runner uses.
        """
        out = json.loads(self.model_dump_json())
        out["train"]["seed"] = self.seed
        return out


def compatibility_issues(spec: ExperimentSpec) -> list[tuple[tuple, str]]:
    """Cross-field rules, as ``(location, message)`` pairs."""
    issues = []
    reg = spec.train.regularizer
    checks = set(spec.checks)
    if "lambda_w1" in checks:
        if reg.kind != "maxal":
            issues.append((("checks",), "lambda_w1 requires regularizer kind maxal"))
        if spec.train.objective is not ObjectiveKind.WGAN:
            issues.append(
                (("checks",), f"lambda_w1 requires objective wgan, got {spec.train.objective.value}")
            )
    if spec.scenario == "gan2d" and checks & {"prop1", "lemma2", "kstar", "lambda_w1"}:
        bad = sorted(checks & {"prop1", "lemma2", "kstar", "lambda_w1"})
        issues.append((("checks",), f"gan2d has no fixed transport plan; cannot run {bad}"))
    if "kstar" in checks and spec.scenario != "kstar_sweep" and reg.kind not in ("gp", "lp", "maxgp"):
        issues.append((("checks",), f"kstar needs a penalty regularizer (gp/lp/maxgp), got {reg.kind}"))
    if spec.scenario == "kstar_sweep":
        if reg.kind not in ("gp", "lp", "maxgp"):
            issues.append(
                (("train", "regularizer", "kind"), "kstar_sweep needs regularizer kind gp, lp or maxgp")
            )
        if not spec.rhos or any(r <= 0 for r in spec.rhos):
            issues.append((("rhos",), "kstar_sweep needs a nonempty list of positive rho values"))
    if spec.scenario == "lambda_track" and reg.kind != "maxal":
        issues.append((("train", "regularizer", "kind"), "lambda_track needs regularizer kind maxal"))
    if spec.scenario == "sn_compare":
        missing = [m for m in SN_COMPARE_REQUIRED if m not in spec.methods]
        if missing:
            issues.append((("methods",), f"sn_compare needs methods {list(SN_COMPARE_REQUIRED)}; missing {missing}"))
        if len(set(spec.methods)) != len(spec.methods):
            issues.append((("methods",), "methods must not repeat"))
    d = spec.data
    if (d.real is None) != (d.fake is None):
        issues.append((("data",), "give both real and fake points, or neither"))
    if (d.real_file is None) != (d.fake_file is None):
        issues.append((("data",), "give both real_file and fake_file, or neither"))
    if d.real is not None and d.real_file is not None:
        issues.append((("data",), "explicit points and point files are mutually exclusive"))
    for key in ("real", "fake"):
        pts = getattr(d, key)
        if pts is not None:
            if not pts or len({len(p) for p in pts}) != 1 or not pts[0]:
                issues.append((("data", key), "points must be a nonempty list of equal-length vectors"))
    if d.real is not None and d.fake is not None and d.real and d.fake:
        if len(d.real) != len(d.fake) or len(d.real[0]) != len(d.fake[0]):
            issues.append((("data",), "real and fake clouds must have the same size and dimension"))
    if "seed" in spec.train.model_fields_set and spec.train.seed != spec.seed:
        issues.append((("train", "seed"), "set the seed at the top level, not under train"))
    return issues


class SpecIssue(BaseModel):
    line: int | None
    location: str
    message: str


class SpecError(ValueError):
    """One or more problems in a spec file, each tied to a source line."""

    def __init__(self, source: str, issues: list[SpecIssue]):
        self.source = source
        self.issues = issues
        super().__init__("\n".join(self.format_lines()))

    def format_lines(self) -> list[str]:
        out = []
        for i in self.issues:
            where = f"{self.source}:{i.line}" if i.line is not None else self.source
            loc = f" {i.location}:" if i.location else ""
            out.append(f"{where}:{loc} {i.message}")
        return out


def _line_of(node: yaml.Node | None, loc: tuple) -> int | None:
    """Source line (1-based) of the deepest node reachable along ``loc``."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                if key.value == str(part):
                    # the key's own line is where a reader looks
                    line = key.start_mark.line + 1
                    node = value
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int):
            if part >= len(node.value):
                return line
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _loc_str(loc: tuple) -> str:
    return ".".join(str(p) for p in loc)


def parse_spec(text: str, source: str = "<spec>", base_dir: Path | None = None) -> ExperimentSpec:
    """Parse and validate spec text; raises :class:`SpecError`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise SpecError(source, [SpecIssue(line=line, location="", message=f"YAML syntax: {problem}")]) from None
    if not isinstance(data, dict):
        raise SpecError(source, [SpecIssue(line=1, location="", message="spec must be a mapping")])
    try:
        spec = ExperimentSpec.model_validate(data)
    except ValidationError as exc:
        issues = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
            issues.append(SpecIssue(line=_line_of(root, loc), location=_loc_str(loc), message=err["msg"]))
        raise SpecError(source, issues) from None
    problems = compatibility_issues(spec)
    if problems:
        raise SpecError(
            source,
            [SpecIssue(line=_line_of(root, loc), location=_loc_str(loc), message=msg) for loc, msg in problems],
        )
    if base_dir is not None:
        d = spec.data
        for key in ("real_file", "fake_file"):
            value = getattr(d, key)
            if value is not None and not Path(value).is_absolute():
                setattr(d, key, str((base_dir / value).resolve()))
    return spec


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(str(path), [SpecIssue(line=None, location="", message=exc.strerror or str(exc))]) from None
    return parse_spec(text, str(path), base_dir=path.parent)
