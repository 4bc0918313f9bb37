import json

from ._lfscore import (
    DataError,
    Dataset,
    LfsError,
    ModelSpec,
    NumericalError,
    UsageError,
    cli,
    cone_project,
    critical_value,
    lfp,
    mc_size_power,
    null_density,
    read_csv,
    rmle,
    score,
    simulate,
)
from ._lfscore import run_test as _run_test

__version__ = "0.1.0"


def run_test(data, beta0=None, cone=None, alpha=0.05, draws=100000, seed=0, threads=0):
    """Score test of beta = beta0. Returns the report as a dict (same keys as `lfscore test`)."""
    return json.loads(_run_test(data, beta0, cone, alpha, draws, seed, threads))
