"""Reconstruction and association-alignment losses.

Alignment compares the row-stochastic attention maps of pairs of
branches. Same-dimension pairs use a per-row symmetric KL; pairs whose
maps have different sizes are first mean-pooled over rows and resampled
to the shorter length by contiguous-bin mass aggregation, which is a
fixed linear map and therefore differentiable. An additive 1e-12 floor
inside every logarithm keeps 32-bit softmax underflow finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as ng
from .errors import ParameterError, ShapeError
from .model import AssociationMaps, ForwardOutput
from .ndgrad import Tensor2

__all__ = [
    "LOG_FLOOR",
    "LossBreakdown",
    "sym_kl_rows",
    "align_series_temporal",
    "resample_matrix",
    "cross_dim_kl",
    "cross_dim_kl_rowwise",
    "align_total",
    "reconstruction_loss",
    "total_loss",
]

LOG_FLOOR = 1e-12


def _as_tensor(x) -> Tensor2:
    return x if isinstance(x, Tensor2) else ng.tensor(x)


def _log_floored(p: Tensor2) -> Tensor2:
    return ng.log(ng.add_scalar(p, LOG_FLOOR))


def sym_kl_rows(p, q) -> Tensor2:
    """Per-row symmetric KL divergence between two row-stochastic matrices.

    Returns an (m, 1) column of KL(p_i || q_i) + KL(q_i || p_i). With the
    shared log floor the result is provably nonnegative row by row.
    """
    p, q = _as_tensor(p), _as_tensor(q)
    if p.shape != q.shape:
        raise ShapeError(f"sym_kl_rows: shapes differ, {p.shape} vs {q.shape}")
    diff = ng.sub(_log_floored(p), _log_floored(q))
    return ng.row_sum(ng.mul(ng.sub(p, q), diff))


def align_series_temporal(maps: AssociationMaps) -> Tensor2:
    """Mean over blocks of per-row symmetric KL(series, temporal); (w, 1)."""
    if maps.temporal is None:
        raise ParameterError("align_series_temporal: temporal branch is disabled")
    acc = None
    for s, t in zip(maps.series, maps.temporal):
        v = sym_kl_rows(s, t)
        acc = v if acc is None else ng.add(acc, v)
    return ng.scale(acc, 1.0 / len(maps.series))


def resample_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """(dst, src) matrix aggregating src probability cells into dst bins.

    Bin j collects the mass of source interval [j*src/dst, (j+1)*src/dst);
    cells straddling a boundary are split in proportion to overlap, so
    column sums are exactly one and total mass is preserved.
    """
    if dst < 1 or src < dst:
        raise ParameterError(f"resample_matrix: need 1 <= dst <= src, got {src}->{dst}")
    r = np.zeros((dst, src), dtype=dtype)
    ratio = src / dst
    for j in range(dst):
        lo, hi = j * ratio, (j + 1) * ratio
        for i in range(int(np.floor(lo)), min(src, int(np.ceil(hi)))):
            overlap = min(i + 1.0, hi) - max(float(i), lo)
            if overlap > 0:
                r[j, i] = overlap
    return r


def _pooled_row(m: Tensor2) -> Tensor2:
    """Mean of the rows of a row-stochastic matrix, as a (1, cols) row."""
    return ng.scale(ng.row_sum(ng.transpose(m)), 1.0 / m.rows).T


def _resample_row(row: Tensor2, dst: int) -> Tensor2:
    """Resample a (k, m) stack of distributions to length dst and renormalize."""
    src = row.cols
    if dst == src:
        out = row
    else:
        r = ng.tensor(resample_matrix(src, dst, dtype=row.value.dtype))
        out = ng.matmul(row, ng.transpose(r))
    return ng.div(out, ng.row_sum(out))


def cross_dim_kl(a, b) -> Tensor2:
    """Alignment between row-stochastic matrices of different sizes; scalar.

    Both matrices are mean-pooled over rows, resampled to the shorter
    length by contiguous-bin aggregation, renormalized, and compared by
    symmetric KL. Same-size inputs reduce to plain symmetric KL of the
    pooled rows.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.rows < 2 or b.rows < 2:
        raise ParameterError(f"cross_dim_kl: degenerate sizes {a.shape}, {b.shape}")
    dst = min(a.cols, b.cols)
    pa = _resample_row(_pooled_row(a), dst)
    pb = _resample_row(_pooled_row(b), dst)
    return sym_kl_rows(pa, pb)  # (1, 1)


def cross_dim_kl_rowwise(a, b) -> Tensor2:
    """Per-row variant: each row of ``a`` against ``b``'s pooled profile.

    Returns an (a.rows, 1) column; used to weight per-sensor residuals.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.rows < 2 or b.rows < 2:
        raise ParameterError(f"cross_dim_kl_rowwise: degenerate sizes {a.shape}, {b.shape}")
    dst = min(a.cols, b.cols)
    ra = _resample_row(a, dst)
    rb = _resample_row(_pooled_row(b), dst)
    # tile b's profile to one row per row of a
    ones = ng.tensor(np.ones((a.rows, 1), dtype=rb.value.dtype))
    return sym_kl_rows(ra, ng.matmul(ones, rb))


def _mean_over_blocks(pairs, fn) -> Tensor2:
    acc = None
    for a, b in pairs:
        v = fn(a, b)
        acc = v if acc is None else ng.add(acc, v)
    return ng.scale(acc, 1.0 / len(pairs))


def align_total(maps: AssociationMaps) -> tuple[Tensor2, dict[str, Tensor2]]:
    """Sum of the three alignment terms (L1 over rows / absolute scalars).

    Terms involving a disabled branch are dropped. Returns the scalar
    total and the individual terms for reporting.
    """
    parts: dict[str, Tensor2] = {}
    if maps.temporal is not None:
        parts["series_temporal"] = ng.sum_all(align_series_temporal(maps))
    if maps.spatial is not None:
        parts["series_spatial"] = _mean_over_blocks(
            list(zip(maps.series, maps.spatial)), cross_dim_kl
        )
    if maps.temporal is not None and maps.spatial is not None:
        parts["temporal_spatial"] = _mean_over_blocks(
            list(zip(maps.temporal, maps.spatial)), cross_dim_kl
        )
    total = None
    for v in parts.values():
        total = v if total is None else ng.add(total, v)
    if total is None:
        total = ng.tensor(np.zeros((1, 1)))
    return total, parts


def reconstruction_loss(
    out: ForwardOutput, values, temporal_state, spatial_state
) -> tuple[Tensor2, Tensor2 | None, Tensor2 | None]:
    """Squared Frobenius norms of the three reconstruction residuals."""
    dt = out.values_rec.value.dtype
    rx = ng.frobenius_sq(ng.sub(ng.tensor(values, dtype=dt), out.values_rec))
    rt = rs = None
    if out.temporal_rec is not None:
        rt = ng.frobenius_sq(ng.sub(ng.tensor(temporal_state, dtype=dt), out.temporal_rec))
    if out.spatial_rec is not None:
        rs = ng.frobenius_sq(ng.sub(ng.tensor(spatial_state, dtype=dt), out.spatial_rec))
    return rx, rt, rs


@dataclass
class LossBreakdown:
    """Scalar loss terms plus the alignment vectors the diagnosis reuses."""

    recon_values: float
    recon_temporal: float
    recon_spatial: float
    align_series_temporal: float
    align_series_spatial: float
    align_temporal_spatial: float
    lam: float
    total: float
    pointwise_series_temporal: np.ndarray | None = None  # (w,)
    rowwise_spatial_series: np.ndarray | None = None     # (n,)
    align_parts: dict = field(default_factory=dict)


def total_loss(
    out: ForwardOutput, values, temporal_state, spatial_state, lam: float
) -> tuple[Tensor2, LossBreakdown]:
    """Reconstruction plus lam * alignment; returns the graph scalar and floats.

    The breakdown also carries the per-timestep series/temporal alignment
    vector and the per-sensor spatial/series alignment vector consumed by
    the anomaly scoring stage (detached values, not graph nodes).
    """
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    rx, rt, rs = reconstruction_loss(out, values, temporal_state, spatial_state)
    recon = rx
    if rt is not None:
        recon = ng.add(recon, rt)
    if rs is not None:
        recon = ng.add(recon, rs)
    align, parts = align_total(out.maps)
    total = ng.add(recon, ng.scale(align, lam)) if lam != 0.0 else recon

    pointwise = None
    if out.maps.temporal is not None:
        with ng.no_grad():
            pointwise = align_series_temporal(out.maps).value[:, 0].copy()
    rowwise = None
    if out.maps.spatial is not None:
        with ng.no_grad():
            acc = None
            for sp, se in zip(out.maps.spatial, out.maps.series):
                v = cross_dim_kl_rowwise(sp, se).value[:, 0]
                acc = v if acc is None else acc + v
            rowwise = acc / len(out.maps.series)

    breakdown = LossBreakdown(
        recon_values=rx.item(),
        recon_temporal=rt.item() if rt is not None else 0.0,
        recon_spatial=rs.item() if rs is not None else 0.0,
        align_series_temporal=parts["series_temporal"].item() if "series_temporal" in parts else 0.0,
        align_series_spatial=parts["series_spatial"].item() if "series_spatial" in parts else 0.0,
        align_temporal_spatial=parts["temporal_spatial"].item() if "temporal_spatial" in parts else 0.0,
        lam=float(lam),
        total=total.item(),
        pointwise_series_temporal=pointwise,
        rowwise_spatial_series=rowwise,
    )
    return total, breakdown
