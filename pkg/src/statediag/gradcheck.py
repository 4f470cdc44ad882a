"""Finite-difference verification of recorded gradients.

The checker never touches backward rules: it perturbs one parameter
coordinate at a time and re-runs the supplied forward closure, so it is
an independent oracle for whatever ``backward`` produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndgrad import Tensor2, backward

__all__ = ["ProbeResult", "check_gradients"]


@dataclass
class ProbeResult:
    name: str
    index: tuple[int, int]
    analytic: float
    numeric: float
    rel_err: float
    ok: bool


def check_gradients(
    build_loss,
    params: dict[str, Tensor2],
    n_probes: int = 100,
    h: float = 1e-4,
    rel_tol: float = 1e-3,
    abs_tol: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> list[ProbeResult]:
    """Compare backward gradients against central finite differences.

    ``build_loss`` must recompute the scalar loss from the parameters'
    current values on every call. Probed coordinates are sampled uniformly
    over all parameter entries. A probe passes when
    ``|analytic - numeric| <= abs_tol + rel_tol * max(|analytic|, |numeric|)``;
    the reported ``rel_err`` uses ``max(|analytic|, |numeric|, abs_tol)`` as
    denominator so exact-zero gradients do not divide by zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    names = sorted(params)
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = {n: np.array(params[n].grad, copy=True) for n in names}

    sizes = np.array([params[n].value.size for n in names])
    total = int(sizes.sum())
    flat_choices = rng.choice(total, size=min(n_probes, total), replace=False)
    bounds = np.cumsum(sizes)

    results: list[ProbeResult] = []
    for flat in flat_choices:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        name = names[pi]
        local = int(flat - (bounds[pi - 1] if pi > 0 else 0))
        p = params[name]
        r, c = divmod(local, p.cols)
        orig = p.value[r, c]
        p.value[r, c] = orig + h
        f_plus = build_loss().item()
        p.value[r, c] = orig - h
        f_minus = build_loss().item()
        p.value[r, c] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = float(analytic[name][r, c])
        diff = abs(ana - numeric)
        ok = diff <= abs_tol + rel_tol * max(abs(ana), abs(numeric))
        rel = diff / max(abs(ana), abs(numeric), abs_tol)
        results.append(ProbeResult(name, (r, c), ana, numeric, rel, ok))
    return results
