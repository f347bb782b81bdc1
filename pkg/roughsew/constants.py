"""
constants.py
============

Caps, defaults and tolerances used across roughsew.

This file collects every tunable number of the library in one place so that
integrators, bound checks and the command line all agree on them.

What you'll find here
---------------------
• Truncation levels for signatures and for the kernel series
• Memory guards on dense tensor storage
• Refinement limits for the sewing and joint integrators
• Size caps for exhaustive variation searches
• Tolerances used by identity checks and bound contracts
• CSV formatting and process exit codes of the command line

How this module is meant to be used
-----------------------------------
This is a data-only module. It doesn't compute anything by itself. The hard
level cap can be overridden at run time through the environment variable
named by ``LEVEL_CAP_ENV``; see ``internal_utils._level_cap``.
"""

# ---------------------------------------------------------------------
# Tensor truncation
# ---------------------------------------------------------------------

DEFAULT_LEVEL = 8
LEVEL_HARD_CAP = 16
LEVEL_CAP_ENV = "ROUGHSEW_MAX_LEVEL"

# Largest number of entries a single dense level may hold (d^L).
MAX_TENSOR_ENTRIES = 10_000_000

# ---------------------------------------------------------------------
# Signature kernel series
# ---------------------------------------------------------------------

DEFAULT_SERIES_LEVEL = 12

# L_ser must exceed 2 * floor(p) by at least this many levels.
SERIES_MARGIN = 2

# Extra terms summed when bounding the dropped tail of a series.
TAIL_TERMS = 400

# Goursat oracle: sub-steps per sample interval of the coarsest solve, and
# the largest value the adaptive doubling may reach.
GOURSAT_REFINE = 16
GOURSAT_MAX_REFINE = 128

# ---------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------

MAX_REFINEMENT_ROUNDS = 14
DEFAULT_TOLERANCE = 1e-8
RANDOM_TRIPLES = 64

# ---------------------------------------------------------------------
# Variation searches
# ---------------------------------------------------------------------

EXACT_MIXED_CAP = 12

# ---------------------------------------------------------------------
# Tolerances
# ---------------------------------------------------------------------

IDENTITY_TOLERANCE = 1e-10
BOUND_SLACK = 1e-6

# Increments below this are treated as zero where ω vanishes.
DEGENERATE_ATOL = 1e-12

# Relative tolerance when matching a float time to a grid node.
GRID_MATCH_RTOL = 1e-12

# ---------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------

CSV_FLOAT_FORMAT = "%.17g"

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INVARIANT = 4

SUBCOMMANDS = (
    "signature",
    "integrate1d",
    "integrate2d",
    "maximal-check",
    "fubini-sweep",
    "variation",
    "stability",
)
