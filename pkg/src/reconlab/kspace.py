"""Fourier operators between Cartesian images and radial k-space.

The non-uniform transform follows the usual gridding recipe: the image is
divided by the kernel apodization, zero-padded onto a grid oversampled by
``GriddingKernel.oversampling``, FFT'd with unitary scaling and interpolated
onto the spoke samples with a Kaiser-Bessel kernel.  The interpolation is a
sparse matrix, so the adjoint is its conjugate transpose and the adjoint
identity holds to rounding error.

Scaling is chosen so that ``forward(x)`` approximates the centred DTFT
``X(k) = (1/sqrt(H W)) sum_n x[n] exp(-2 pi i k.(n - c))`` which agrees with
:func:`fft2_centered` on the Cartesian grid.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tensorio import Cine, load_tensor, save_tensor
from .trajectory import SpokeSet, TrajectorySpec, spoke_coordinates


def fft2_centered(x: np.ndarray) -> np.ndarray:
    """Unitary 2D FFT over the last two axes with DC at index (H//2, W//2)."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1), norm="ortho"), axes=(-2, -1))


def ifft2_centered(k: np.ndarray) -> np.ndarray:
    k = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(k, axes=(-2, -1), norm="ortho"), axes=(-2, -1))


@dataclass(frozen=True)
class GriddingKernel:
    width: int = 4
    oversampling: float = 1.5
    beta: float | None = None  # None -> Beatty et al. minimal-aliasing choice

    def __post_init__(self):
        if self.width < 2:
            raise ValueError("kernel width must be >= 2")
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")

    @property
    def shape_beta(self) -> float:
        if self.beta is not None:
            return float(self.beta)
        w, a = self.width, self.oversampling
        return math.pi * math.sqrt((w / a) ** 2 * (a - 0.5) ** 2 - 0.8)

    def grid_size(self, n: int) -> int:
        g = int(math.ceil(self.oversampling * n))
        return g + (g - n) % 2

    def __call__(self, t: np.ndarray) -> np.ndarray:
        """Kernel value at offset ``t`` (grid cells); zero for ``|t| >= width/2``."""
        t = np.asarray(t, dtype=np.float64)
        arg = 1.0 - (2.0 * t / self.width) ** 2
        out = np.zeros_like(t)
        inside = arg > 0
        out[inside] = np.i0(self.shape_beta * np.sqrt(arg[inside]))
        return out

    def transform(self, nu: np.ndarray) -> np.ndarray:
        """Continuous Fourier transform of the kernel at frequency ``nu`` (cycles/cell)."""
        b = self.shape_beta
        z = np.sqrt(b**2 - (math.pi * self.width * np.asarray(nu, dtype=np.float64)) ** 2 + 0j)
        small = np.abs(z) < 1e-8
        z_safe = np.where(small, 1.0, z)
        val = np.where(small, 1.0, np.sinh(z_safe) / z_safe)
        return self.width * val.real


def _axis_weights(u: np.ndarray, kernel: GriddingKernel, g: int):
    """Neighbour indices (mod g) and kernel weights along one axis."""
    w = kernel.width
    j0 = np.floor(u - w / 2.0).astype(np.int64) + 1
    offs = np.arange(w)
    j = j0[:, None] + offs[None, :]
    wts = kernel(u[:, None] - j)
    return np.mod(j, g), wts


def interpolation_matrix(
    kx: np.ndarray, ky: np.ndarray, grid: tuple[int, int], kernel: GriddingKernel
) -> sp.csr_matrix:
    """Sparse (n_samples x gh*gw) Kaiser-Bessel interpolation from a centred grid."""
    gh, gw = grid
    kx = np.ravel(kx)
    ky = np.ravel(ky)
    if np.any(np.abs(kx) > 0.5 + 1e-9) or np.any(np.abs(ky) > 0.5 + 1e-9):
        raise ValueError("spoke coordinates outside [-0.5, 0.5]")
    jr, wr = _axis_weights(ky * gh + gh // 2, kernel, gh)
    jc, wc = _axis_weights(kx * gw + gw // 2, kernel, gw)
    m = kx.size
    w = kernel.width
    cols = (jr[:, :, None] * gw + jc[:, None, :]).reshape(m, w * w)
    vals = (wr[:, :, None] * wc[:, None, :]).reshape(m, w * w)
    rows = np.repeat(np.arange(m), w * w)
    mat = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, gh * gw))
    mat.sum_duplicates()
    return mat


def ramlak_response(r: np.ndarray, taps: int) -> np.ndarray:
    """Frequency response of the spatial Ram-Lak filter truncated to ``|n| <= taps``.

    Approaches ``|r|`` for ``|r| <= 0.5`` but carries the correct non-zero DC
    term of a finite-support object, removing the offset that the sampled
    ``|r|`` ramp leaves behind.
    """
    n = np.arange(1, taps + 1, 2, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    out = np.full(r.shape, 0.25)
    for ni in n:
        out -= 2.0 * np.cos(2.0 * math.pi * r * ni) / (math.pi**2 * ni**2)
    return out


def density_weights(
    spoke_set: SpokeSet, image_shape: tuple[int, int], method: str = "ramlak"
) -> np.ndarray:
    """Radial density compensation, shape (S, L).

    ``method="ramp"`` uses ``|r|`` with the DC sample (if any) set to half the
    smallest non-zero weight; ``"ramlak"`` uses :func:`ramlak_response` with
    taps spanning the image width.  Either is scaled by the per-sample area
    ``pi dr / S`` and by ``H W`` so the weighted adjoint approximates the
    inverse transform.
    """
    r = spoke_set.radius
    n_spokes, n_read = r.shape
    h, wd = image_shape
    if method == "ramp":
        w = r.copy()
        nz = w > 1e-12
        if np.any(~nz):
            w[~nz] = w[nz].min() / 2.0
    elif method == "ramlak":
        w = ramlak_response(r, max(h, wd))
    else:
        raise ValueError(f"unknown density compensation {method!r}")
    dr = 1.0 / (n_read - 1)
    return w * (math.pi * dr / n_spokes) * (h * wd)


class RadialNufft:
    """Image stack (T, H, W) <-> radial samples (T, S, L) with per-frame spokes.

    A leading coil axis is carried through unchanged: (C, T, H, W) <-> (C, T, S, L).
    """

    def __init__(
        self,
        image_shape: tuple[int, int],
        spoke_sets: Sequence[SpokeSet],
        kernel: GriddingKernel | None = None,
        dcf: str = "ramlak",
    ):
        self.kernel = kernel or GriddingKernel()
        self.dcf = dcf
        self.image_shape = tuple(int(s) for s in image_shape)
        h, w = self.image_shape
        self.grid = (self.kernel.grid_size(h), self.kernel.grid_size(w))
        self.spoke_sets = list(spoke_sets)
        self.n_frames = len(self.spoke_sets)
        shapes = {s.kx.shape for s in self.spoke_sets}
        if len(shapes) != 1:
            raise ValueError("all frames must share the spokes x readout shape")
        self.sample_shape = shapes.pop()
        gh, gw = self.grid
        self._mats = [
            interpolation_matrix(s.kx, s.ky, self.grid, self.kernel) for s in self.spoke_sets
        ]
        self._block = sp.block_diag(self._mats, format="csr")
        self._block_h = self._block.conj().T.tocsr()
        # deapodization and scale to the N-grid unitary convention
        ny = (np.arange(h) - h // 2) / gh
        nx = (np.arange(w) - w // 2) / gw
        apod = np.outer(self.kernel.transform(ny), self.kernel.transform(nx))
        self._pre = math.sqrt(gh * gw / (h * w)) / apod
        self._pad = ((gh - h) // 2, (gw - w) // 2)
        self._density = None

    @classmethod
    def for_trajectory(
        cls,
        spec: TrajectorySpec,
        n_frames: int,
        image_shape: tuple[int, int],
        kernel: GriddingKernel | None = None,
        dcf: str = "ramlak",
    ) -> "RadialNufft":
        sets = [spoke_coordinates(spec, f) for f in range(n_frames)]
        return cls(image_shape, sets, kernel, dcf)

    def _split(self, x: np.ndarray, tail: tuple[int, ...]):
        if x.shape[-len(tail) - 1:] != (self.n_frames, *tail):
            raise ValueError(f"expected (..., {self.n_frames}, {tail}), got {x.shape}")
        lead = x.shape[: x.ndim - len(tail) - 1]
        return lead, int(np.prod(lead, dtype=np.int64))

    def forward(self, x: np.ndarray) -> np.ndarray:
        lead, nb = self._split(x, self.image_shape)
        h, w = self.image_shape
        gh, gw = self.grid
        ph, pw = self._pad
        xb = np.reshape(x, (nb, self.n_frames, h, w)) * self._pre
        big = np.zeros((nb, self.n_frames, gh, gw), dtype=np.complex128)
        big[..., ph:ph + h, pw:pw + w] = xb
        spec = fft2_centered(big).reshape(nb, -1)
        y = self._block @ spec.T  # (T*M, nb)
        return y.T.reshape(*lead, self.n_frames, *self.sample_shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        lead, nb = self._split(y, self.sample_shape)
        h, w = self.image_shape
        gh, gw = self.grid
        ph, pw = self._pad
        yb = np.reshape(y, (nb, -1)).astype(np.complex128)
        spec = (self._block_h @ yb.T).T.reshape(nb, self.n_frames, gh, gw)
        img = ifft2_centered(spec)[..., ph:ph + h, pw:pw + w] * self._pre
        return img.reshape(*lead, self.n_frames, h, w)

    def density(self) -> np.ndarray:
        if self._density is None:
            self._density = np.stack(
                [density_weights(s, self.image_shape, self.dcf) for s in self.spoke_sets])
        return self._density

    def gridding_recon(self, y: np.ndarray) -> np.ndarray:
        """Density-compensated adjoint (the aliased 'gridding' reconstruction)."""
        return self.adjoint(y * self.density())


def degrid(image: np.ndarray, spoke_set: SpokeSet, kernel: GriddingKernel | None = None) -> np.ndarray:
    """Radial samples (S, L) of one image frame."""
    op = RadialNufft(image.shape, [spoke_set], kernel)
    return op.forward(np.asarray(image)[None])[0]


def regrid_adjoint(
    samples: np.ndarray,
    spoke_set: SpokeSet,
    image_shape: tuple[int, int],
    density_comp: bool = True,
    kernel: GriddingKernel | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint regridding of one frame; returns (complex image, magnitude)."""
    samples = np.asarray(samples)
    if samples.shape != spoke_set.kx.shape:
        raise ValueError(f"samples {samples.shape} do not match spokes {spoke_set.kx.shape}")
    op = RadialNufft(image_shape, [spoke_set], kernel)
    y = samples[None]
    img = op.gridding_recon(y)[0] if density_comp else op.adjoint(y)[0]
    return img, np.abs(img)


# --------------------------------------------------------------------------- coils


def coil_sensitivities(image_shape: tuple[int, int], ncoils: int, width: float = 0.45,
                       ring: float = 0.55) -> np.ndarray:
    """Smooth real Gaussian-lobe maps (C, H, W) normalised to unit root-sum-of-squares.

    Lobes sit on a regular ``ncoils``-gon of radius ``ring`` (fraction of the
    half field of view); ``width`` is the lobe sigma in the same units.
    """
    if ncoils < 1:
        raise ValueError("ncoils must be >= 1")
    h, w = image_shape
    if ncoils == 1:
        return np.ones((1, h, w), dtype=np.complex128)
    yy = (np.arange(h) - h // 2) / (h / 2)
    xx = (np.arange(w) - w // 2) / (w / 2)
    Y, X = np.meshgrid(yy, xx, indexing="ij")
    ang = 2 * math.pi * np.arange(ncoils) / ncoils
    cy, cx = ring * np.sin(ang), ring * np.cos(ang)
    lobes = np.exp(-((Y[None] - cy[:, None, None]) ** 2 + (X[None] - cx[:, None, None]) ** 2)
                   / (2 * width**2))
    lobes /= np.sqrt(np.sum(lobes**2, axis=0, keepdims=True))
    return lobes.astype(np.complex128)


def simulate_coils(frame: np.ndarray, ncoils: int) -> np.ndarray:
    """Per-coil images (C, ..., H, W) of ``frame`` (..., H, W)."""
    maps = coil_sensitivities(frame.shape[-2:], ncoils)
    maps = maps.reshape(ncoils, *([1] * (frame.ndim - 2)), *frame.shape[-2:])
    return maps * frame[None]


def combine_coils(coil_images: np.ndarray) -> np.ndarray:
    """Root-sum-of-squares over the leading coil axis."""
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=0))


def estimate_coil_maps(y: np.ndarray, op: RadialNufft, radius: float = 0.05,
                       eps: float = 1e-8) -> np.ndarray:
    """Self-calibrated sensitivities from the k-space centre of all frames.

    All frames' samples with ``|k| <= radius`` are pooled, density
    compensated and regridded per coil; the low-resolution coil images are
    divided by their root-sum-of-squares.  The window is flat up to
    ``radius / 2`` and rolls off with a cosine (Tukey) to limit ringing.
    """
    if y.ndim != 4:
        raise ValueError("expected per-coil samples (C, T, S, L)")
    r = np.stack([s.radius for s in op.spoke_sets])
    half = radius / 2
    roll = 0.5 * (1 + np.cos(math.pi * np.clip(r - half, 0, None) / half))
    taper = np.where(r <= radius, roll, 0.0)
    dens = op.density() / op.n_frames
    low = op.adjoint(y * (dens * taper)).sum(axis=1)  # (C, H, W)
    rss = np.sqrt(np.sum(np.abs(low) ** 2, axis=0, keepdims=True))
    return low / np.maximum(rss, eps)


# --------------------------------------------------------------------------- data


@dataclass
class RadialKSpace:
    """Radial samples (C, T, S, L) plus the trajectory that produced them."""

    samples: np.ndarray
    spec: TrajectorySpec
    image_shape: tuple[int, int]
    coil_maps: np.ndarray | None = field(default=None, repr=False)

    @property
    def ncoils(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    def operator(self, kernel: GriddingKernel | None = None) -> RadialNufft:
        return RadialNufft.for_trajectory(self.spec, self.n_frames, self.image_shape, kernel)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_tensor(path, self.samples.astype(np.complex64))
        meta = {"trajectory": self.spec.to_dict(), "image_shape": list(self.image_shape)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RadialKSpace":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        samples = load_tensor(path)
        return cls(samples, TrajectorySpec.from_dict(meta["trajectory"]),
                   tuple(meta["image_shape"]))


def corrupt_cine(
    cine: Cine | np.ndarray,
    spec: TrajectorySpec,
    ncoils: int = 1,
    kernel: GriddingKernel | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, RadialKSpace]:
    """Undersample every frame on its spokes and regrid with density compensation.

    Returns the aliased magnitude cine (coil-combined) and the raw radial data.
    """
    data = cine.data if isinstance(cine, Cine) else np.asarray(cine)
    t, h, w = data.shape
    op = RadialNufft.for_trajectory(spec, t, (h, w), kernel)
    x = data.astype(np.complex128)
    if ncoils > 1:
        maps = coil_sensitivities((h, w), ncoils)
        x = maps[:, None] * x[None]
    else:
        maps = None
        x = x[None]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            y = np.stack(list(pool.map(op.forward, x)))
            img = np.stack(list(pool.map(op.gridding_recon, y)))
    else:
        y = op.forward(x)
        img = op.gridding_recon(y)
    aliased = combine_coils(img)
    radial = RadialKSpace(y.astype(np.complex64), spec, (h, w), maps)
    return aliased.astype(np.float32), radial
