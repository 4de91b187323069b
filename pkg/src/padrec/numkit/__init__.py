"""Dense tensor math with a reverse-mode tape, deterministic by construction.

Every dot product accumulates in f64 over ascending indices, so results are
bitwise independent of batch grouping: the property that makes batched tree
verification agree exactly with sequential decoding.
"""

from padrec.numkit import kernels
from padrec.numkit.fdcheck import FdReport, finite_diff_check
from padrec.numkit.kernels import sample_from_probs, softmax_rows
from padrec.numkit.optim import Adam, adam_step
from padrec.numkit.rng import Rng
from padrec.numkit.tensor import Tensor, attention, ce_rows

__all__ = [
    "Adam",
    "FdReport",
    "Rng",
    "Tensor",
    "adam_step",
    "attention",
    "ce_rows",
    "finite_diff_check",
    "kernels",
    "sample_from_probs",
    "softmax_rows",
]
