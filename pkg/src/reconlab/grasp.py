"""Compressed-sensing reconstruction with a temporal total-variation penalty.

Minimises ``0.5 ||A x - y||^2 + lam ||D x||_1`` over complex cines ``x``
with ADMM: a conjugate-gradient x-update, complex soft-thresholding of the
temporal differences and a scaled dual update.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .kspace import GriddingKernel, RadialKSpace, RadialNufft
from .tensorio import Cine, normalize01

log = logging.getLogger(__name__)


class GraspError(RuntimeError):
    """Solver diverged; ``trace`` holds the objective rows recorded so far."""

    def __init__(self, msg: str, trace: list[dict]):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class GraspConfig:
    lam: float = 0.025
    admm_iters: int = 50
    rho: float = 1.0
    cg_iters: int = 10
    cg_tol: float = 1e-6
    circular: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.admm_iters < 1 or self.cg_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be > 0")


def temporal_diff(x: np.ndarray, circular: bool = True) -> np.ndarray:
    """Forward differences along axis 0; circular wraps the last frame onto the first."""
    if x.shape[0] < 2:
        raise ValueError("temporal difference needs at least two frames")
    if circular:
        return np.roll(x, -1, axis=0) - x
    return x[1:] - x[:-1]


def temporal_diff_adjoint(d: np.ndarray, circular: bool = True) -> np.ndarray:
    if circular:
        if d.shape[0] < 2:
            raise ValueError("temporal difference needs at least two frames")
        return np.roll(d, 1, axis=0) - d
    out = np.zeros((d.shape[0] + 1, *d.shape[1:]), dtype=d.dtype)
    out[:-1] -= d
    out[1:] += d
    return out


def soft_threshold(v: np.ndarray | float, tau: float):
    """Shrink magnitudes by ``tau`` keeping the phase (sign for real input)."""
    if tau < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v)
    if tau == 0:
        return v.copy()
    mag = np.abs(v)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return v * scale


@dataclass
class GraspState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    trace: list[dict] = field(default_factory=list)


@dataclass
class GraspResult:
    cine: Cine
    x: np.ndarray
    trace: list[dict]
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


class _System:
    """A = per-frame coil weighting followed by the radial transform."""

    def __init__(self, op: RadialNufft, maps: np.ndarray | None):
        self.op = op
        self.maps = maps  # (C, H, W) or None

    def forward(self, x):
        if self.maps is None:
            return self.op.forward(x)[None]
        return self.op.forward(self.maps[:, None] * x[None])

    def adjoint(self, y):
        if self.maps is None:
            return self.op.adjoint(y[0])
        return np.sum(np.conj(self.maps)[:, None] * self.op.adjoint(y), axis=0)

    def init(self, y):
        dc = self.op.gridding_recon(y)  # (C, T, H, W)
        if self.maps is None:
            return dc[0]
        num = np.sum(np.conj(self.maps)[:, None] * dc, axis=0)
        den = np.sum(np.abs(self.maps) ** 2, axis=0)
        return num / np.maximum(den, 1e-12)


def conjugate_gradient(apply, b, x0, iters, tol):
    """CG for Hermitian positive (semi-)definite ``apply``; inner products in fixed order."""
    x = x0.copy()
    r = b - apply(x)
    p = r.copy()
    rs = np.vdot(r, r).real
    b_norm = math.sqrt(np.vdot(b, b).real) or 1.0
    for _ in range(iters):
        if math.sqrt(rs) <= tol * b_norm:
            break
        ap = apply(p)
        denom = np.vdot(p, ap).real
        if denom <= 0:
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def grasp_reconstruct(
    data: RadialKSpace,
    cfg: GraspConfig | None = None,
    coil_maps: np.ndarray | None = None,
    kernel: GriddingKernel | None = None,
    snapshots: Iterable[int] = (),
) -> GraspResult:
    """Reconstruct a cine from (multi-coil) radial samples.

    ``coil_maps`` (C, H, W) are required when the data has more than one
    coil; ``data.coil_maps`` is used if none are passed.  ``snapshots``
    lists iteration numbers whose complex iterates are returned.
    """
    cfg = cfg or GraspConfig()
    y = np.asarray(data.samples, dtype=np.complex128)
    maps = coil_maps if coil_maps is not None else data.coil_maps
    if maps is not None:
        maps = np.asarray(maps, dtype=np.complex128)
        if maps.shape != (data.ncoils, *data.image_shape):
            raise ValueError(f"coil maps {maps.shape} do not match data "
                             f"({data.ncoils}, {data.image_shape})")
    elif data.ncoils != 1:
        raise ValueError("multi-coil data needs coil maps")
    op = data.operator(kernel)
    sys = _System(op, maps)
    D = lambda v: temporal_diff(v, cfg.circular)
    Dt = lambda v: temporal_diff_adjoint(v, cfg.circular)
    normal = lambda v: sys.adjoint(sys.forward(v)) + cfg.rho * Dt(D(v))
    aty = sys.adjoint(y)

    x = sys.init(y)
    dx = D(x)
    state = GraspState(x=x, z=soft_threshold(dx, cfg.lam / cfg.rho), u=np.zeros_like(dx))
    keep = set(snapshots)
    snaps: dict[int, np.ndarray] = {}
    if 0 in keep:
        snaps[0] = x.copy()
    for it in range(1, cfg.admm_iters + 1):
        rhs = aty + cfg.rho * Dt(state.z - state.u)
        state.x = conjugate_gradient(normal, rhs, state.x, cfg.cg_iters, cfg.cg_tol)
        dx = D(state.x)
        state.z = soft_threshold(dx + state.u, cfg.lam / cfg.rho)
        state.u = state.u + dx - state.z
        resid = sys.forward(state.x) - y
        fid = 0.5 * float(np.vdot(resid, resid).real)
        tv = float(np.sum(np.abs(dx)))
        row = {"iter": it, "fidelity": fid, "tv": tv, "total": fid + cfg.lam * tv,
               "primal_residual": float(np.linalg.norm(dx - state.z))}
        state.trace.append(row)
        if not all(math.isfinite(v) for v in row.values()):
            raise GraspError(f"non-finite objective at iteration {it}", state.trace)
        log.debug("grasp iter %d total %.6g", it, row["total"])
        if it in keep:
            snaps[it] = state.x.copy()
    mag = np.abs(state.x)
    return GraspResult(Cine(normalize01(mag)), state.x, state.trace, snaps)


def trace_csv(trace: list[dict]) -> str:
    buf = io.StringIO()
    cols = ["iter", "fidelity", "tv", "total", "primal_residual"]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in trace:
        w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in cols})
    return buf.getvalue()
