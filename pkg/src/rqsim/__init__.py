"""Simulator for the semantic intersection attack on random-set DNS range queries."""

from .adversary import (
    AttackResult,
    LengthEstimate,
    attack_1bd,
    attack_1bd_improved,
    attack_abd,
    estimate_length,
    k_identifiability,
)
from .analytic import ModelInput, ModelOutput, expected_detected, expected_mean
from .client import (
    ClientConfig,
    Trace,
    generate_trace,
    generate_trace_pattern_based,
    generate_trace_random,
    view_1bd,
    view_abd,
)
from .harness import ExperimentConfig, compare_analytic, run_experiment, write_report
from .patterns import (
    DummyDatabase,
    Pattern,
    PatternDatabase,
    SynthSpec,
    build_dummy_db,
    db_stats,
    gen_synthetic_db,
    load_pattern_db,
)

__version__ = "0.1.0"
