"""LLM-assisted optimizer and metaheuristic baselines for robust cell search."""

from .benchmark import (
    ALL_INSTANCES,
    AttackKind,
    BenchmarkTable,
    DatasetKind,
    FitnessCounter,
    Instance,
    evaluate,
    generate_surrogate,
    load_table,
    table_optimum,
)
from .experiments import run_campaign, summarize
from .llm_optimizer import DEFAULT_TEMPLATE, LlmoConfig, MockBackend, llmo_run, parse_solution, render_prompt
from .metaheuristics import make_optimizer, run_optimizer, spec_from_dict, transfer_decode
from .records import TrialRecord
from .search_space import Genotype, OperationKind, enumerate_all, genotype_from_indices, genotype_to_index

__version__ = "0.1.0"
