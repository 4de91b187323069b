"""Central finite-difference checking of tape gradients."""

from dataclasses import dataclass, field

import numpy as np

from padrec.numkit.rng import Rng
from padrec.numkit.tensor import Tensor


@dataclass
class FdReport:
    """Per-parameter max relative errors plus the overall verdict."""

    tol: float
    per_param: dict = field(default_factory=dict)
    max_rel_err: float = 0.0
    passed: bool = True

    def record(self, name: str, err: float) -> None:
        self.per_param[name] = max(self.per_param.get(name, 0.0), err)
        self.max_rel_err = max(self.max_rel_err, err)
        if err >= self.tol:
            self.passed = False


def finite_diff_check(closure, params, tol=1e-3, h=1e-3, n_sample=64, seed=7) -> FdReport:
    """Compare tape grads of closure() against central differences.

    closure: () -> scalar Tensor, deterministic, rebuilt each call.
    params: dict name -> Tensor leaf that the closure reads through .data.
    Relative error is |analytic - numeric| / max(|numeric|, 1e-6), so a doubled
    gradient reports ~1.0.
    """
    rng = Rng(seed)
    loss = closure()
    loss.backward()
    analytic = {name: p.grad_or_zero().copy() for name, p in params.items()}
    for p in params.values():
        p.grad = None

    report = FdReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = range(n) if n <= n_sample else sorted({rng.randint(n) for _ in range(n_sample)})
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + h
            x_up = float(flat[c])  # realized offset after dtype rounding
            up = closure().item()
            flat[c] = keep - h
            x_dn = float(flat[c])
            dn = closure().item()
            flat[c] = keep
            numeric = (up - dn) / (x_up - x_dn)
            err = abs(float(a_flat[c]) - numeric) / max(abs(numeric), 1e-6)
            report.record(name, err)
    return report
