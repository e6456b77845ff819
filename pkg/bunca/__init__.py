"""Bundle recommendation with item-level causation-enhanced multi-view learning."""

import os

from dotenv import load_dotenv

load_dotenv()

# Thread caps must be in place before numpy loads its BLAS
_threads = os.environ.get("BUNCA_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)


class BuncaError(Exception):
    """Base class of every error raised by this package."""
