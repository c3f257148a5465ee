"""Evaluation metrics: cSSIM, PSNR, MSE and Hausdorff distance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cube import ComplexCube, PlaneKind, project_spectrogram
from .losses import cssim_planes, plane_range, ssim

PSNR_CAP = 99.0


def _same_dims(a: ComplexCube, b: ComplexCube):
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")


def rd_planes(cube: ComplexCube) -> np.ndarray:
    """All range-Doppler planes as ``(T*A, R, D)`` complex128, frame-major."""
    return np.moveaxis(cube.data.astype(np.complex128), 3, 1).reshape(-1, cube.dims[1], cube.dims[2])


def cssim(a: ComplexCube, b: ComplexCube, plane="rd", data_range: str = "reference", config=None) -> float:
    """Complex SSIM of ``a`` against reference ``b``.

    On the RD view: mean over frames and antennas of the averaged real- and
    imaginary-part SSIM, dynamic range ``max |b|`` per plane (``"joint"``
    uses the max over both planes). RA/RE views compare per-frame magnitude
    spectrograms.
    """
    _same_dims(a, b)
    plane = PlaneKind(plane)
    if plane is PlaneKind.RANGE_DOPPLER:
        pa, pb = rd_planes(a), rd_planes(b)
        if data_range == "reference":
            rng_ = plane_range(pb)
        elif data_range == "joint":
            rng_ = np.maximum(plane_range(pa), plane_range(pb))
        else:
            raise ValueError(f"unknown data_range {data_range!r}")
        return cssim_planes(pa, pb, rng_)
    ma = np.stack([project_spectrogram(a, plane, t, config).magnitude for t in range(a.dims[0])])
    mb = np.stack([project_spectrogram(b, plane, t, config).magnitude for t in range(b.dims[0])])
    ref = mb if data_range == "reference" else np.maximum(ma, mb)
    rng_ = ref.max(axis=(1, 2))
    return float(np.mean(ssim(ma, mb, np.where(rng_ > 0, rng_, 1.0))))


def mse(a: ComplexCube, b: ComplexCube) -> float:
    """Mean squared error over real and imaginary components jointly."""
    _same_dims(a, b)
    d = a.data.astype(np.complex128) - b.data.astype(np.complex128)
    return float(np.mean(np.concatenate([d.real.ravel() ** 2, d.imag.ravel() ** 2])))


def psnr(a: ComplexCube, b: ComplexCube) -> float:
    """``10 log10(peak^2 / MSE)`` with ``peak = max |b|``; capped at 99 dB."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    peak = float(np.abs(b.data.astype(np.complex128)).max())
    if peak == 0.0:
        return -math.inf
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / err))


def _points(x) -> np.ndarray:
    pts = np.asarray(getattr(x, "points", x), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("hausdorff: empty point cloud")
    return pts


def directed_hausdorff(p, q) -> float:
    """``max_p min_q |p - q|``."""
    p, q = _points(p), _points(q)
    worst = 0.0
    for s in range(0, len(p), 1024):
        d2 = ((p[s:s + 1024, None, :] - q[None, :, :]) ** 2).sum(axis=-1)
        worst = max(worst, float(d2.min(axis=1).max()))
    return math.sqrt(worst)


def hausdorff(p, q) -> float:
    return max(directed_hausdorff(p, q), directed_hausdorff(q, p))


@dataclass(frozen=True)
class MetricReport:
    cssim: float
    psnr: float
    mse: float
    hausdorff: float | None = None

    def as_row(self) -> dict:
        return {
            "cssim": self.cssim,
            "psnr": self.psnr,
            "mse": self.mse,
            "hausdorff": "" if self.hausdorff is None else self.hausdorff,
        }


def evaluate(a: ComplexCube, b: ComplexCube, pc_threshold: float | None = None, config=None, plane="rd") -> MetricReport:
    """All metrics of ``a`` against reference ``b``.

    With ``pc_threshold`` the Hausdorff distance of extracted point clouds is
    averaged over frames where both clouds are non-empty.
    """
    hd = None
    if pc_threshold is not None:
        from .sim import extract_pointcloud

        dists = []
        for t in range(a.dims[0]):
            pa = extract_pointcloud(a, t, pc_threshold, config)
            pb = extract_pointcloud(b, t, pc_threshold, config)
            if len(pa) and len(pb):
                dists.append(hausdorff(pa, pb))
        hd = float(np.mean(dists)) if dists else None
    return MetricReport(cssim(a, b, plane, config=config), psnr(a, b), mse(a, b), hd)
