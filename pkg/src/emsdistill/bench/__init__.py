"""Experiment harness: plans, resumable execution, tables."""

from .plan import BENCHMARKS, DEFAULT_SEEDS, ExperimentPlan, is_learning, parse_policy
from .report import EvalReport, best_per_building, reduction
from .runner import Ledger, PlanRunner, compression_summary, evaluate_cell, run_plan

__all__ = ["BENCHMARKS", "DEFAULT_SEEDS", "ExperimentPlan", "is_learning", "parse_policy", "EvalReport",
           "best_per_building", "reduction", "Ledger", "PlanRunner", "compression_summary", "evaluate_cell",
           "run_plan"]
