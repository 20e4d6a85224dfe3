#!/usr/bin/env python3

"""
Module: constants.py

Contains numeric constants, benchmark mixture weights, variant names and
exit codes for use in amean.
"""
# probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before any log:
PROB_CLAMP = 1e-12
# tolerance for simplex checks on weight vectors:
SIMPLEX_TOL = 1e-9
# VAT power iteration step size:
VAT_XI = 1e-6

# training modes:
JOINT = "joint"
ALTERNATING = "alternating"
MODES = (JOINT, ALTERNATING)

# training variants:
AMEAN = "amean"
NO_META = "no-meta"
EXPLICIT = "explicit-sub-target"
STATIC_K = "static-k-clustering"
SOURCE_ONLY = "source-only"
SINGLE_TARGET = "single-target"
VARIANTS = (AMEAN, NO_META, EXPLICIT, STATIC_K, SOURCE_ONLY, SINGLE_TARGET)
# the five rows of the ablation table:
ABLATION_VARIANTS = (SOURCE_ONLY, NO_META, EXPLICIT, STATIC_K, AMEAN)

GAMMA_SCHEDULE = "iter/max_iter"

# Domain-set proportions of the public benchmarks, by hidden sub-target domain.
# Used as mixture weights when a subset of domains forms the mixed target.
BENCHMARK_WEIGHTS = {
    "digit-five": {"mt": 0.236, "mm": 0.236, "sv": 0.236, "sy": 0.236, "up": 0.056},
    "office-31": {"A": 0.686, "D": 0.121, "W": 0.193},
    "office-home": {"Ar": 0.155, "Cl": 0.280, "Pr": 0.285, "Rw": 0.280},
}

# cli exit codes:
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
