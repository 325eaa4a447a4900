"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import Tensor


@dataclass
class GradCheckReport:
    worst_rel_error: float
    worst_name: str
    n_probes: int
    tolerance: float
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.worst_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: worst relative error {self.worst_rel_error:.3e} at {self.worst_name} "
                f"({self.n_probes} probes, tolerance {self.tolerance:g})")


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn: Callable[[], Tensor], inputs: Mapping[str, Tensor], h: float = 1e-4,
               tolerance: float = 1e-4, max_probes_per_tensor: int | None = None,
               rng: np.random.Generator | None = None, floor: float = 1e-8) -> GradCheckReport:
    """Compare backprop gradients of the scalar ``fn()`` with central differences.

    ``inputs`` are the tensors to probe (they must require grad and should be
    float64). ``fn`` must rebuild the graph from their current ``.data`` on
    every call. With ``max_probes_per_tensor`` only a random subset of
    entries is probed. The relative error uses ``floor`` as the smallest
    denominator so entries whose true gradient is ~0 are judged absolutely.
    """
    for t in inputs.values():
        t.grad = None
    out = fn()
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in inputs.items()}

    rng = rng or np.random.default_rng(0)
    worst, worst_name, probes = 0.0, "", 0
    per_tensor = {}
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes_per_tensor is not None and flat.size > max_probes_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_probes_per_tensor, replace=False))
        tensor_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor)
            probes += 1
            tensor_worst = max(tensor_worst, err)
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
        per_tensor[name] = tensor_worst
    return GradCheckReport(worst, worst_name, probes, tolerance, per_tensor)
