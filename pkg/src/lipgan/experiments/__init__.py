"""Spec-driven experiment runner and its command-line interface."""

from .checks import run_checks, summarize
from .fields import export_gradient_field, export_increment_path, increment_eps_grid
from .runner import collect_report, output_dir, run_many, run_spec
from .spec import ExperimentSpec, SpecError, load_spec, parse_spec

__all__ = [
    "ExperimentSpec",
    "SpecError",
    "collect_report",
    "export_gradient_field",
    "export_increment_path",
    "increment_eps_grid",
    "load_spec",
    "output_dir",
    "parse_spec",
    "run_checks",
    "run_many",
    "run_spec",
    "summarize",
]
