"""Per-cube INR fitting.

Each epoch draws one coordinate batch (half energy-weighted over range bins,
half uniform) for the MSE term, plus whole range-Doppler planes for the
SSIM and perceptual terms, then takes one Adam step. Targets are scaled to
unit peak during training; the scale is folded back into the output layer.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .cube import ComplexCube
from .engine import AdamState, ParamVector, adam_step, check_finite
from .inr import InrArch, InrParams, backward_batch, encode_inputs, forward_batch, init_params, sample, SamplePlan
from .metrics import cssim, mse as cube_mse, psnr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 500
    lr: float = 1e-4
    batch_size: int = 16384
    w_ssim: float = 0.5
    w_mse: float = 0.3
    w_perceptual: float = 0.2
    activity_fraction: float = 0.5
    planes_per_epoch: int = 2
    seed: int = 0
    perceptual_seed: int = 0

    def __post_init__(self):
        if min(self.w_ssim, self.w_mse, self.w_perceptual) < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0.0 <= self.activity_fraction <= 1.0:
            raise ValueError("activity_fraction must be in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1 or self.planes_per_epoch < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and planes_per_epoch >= 1 required")


class Target:
    """A cube prepared for training: unit-peak values plus sampling tables."""

    def __init__(self, cube: ComplexCube, scale: float | None = None):
        data = cube.data.astype(np.complex128)
        if scale is None:
            peak = float(np.abs(data).max())
            scale = peak if peak > 0 else 1.0
        self.scale = float(scale)
        self.values = data / self.scale
        self.dims = cube.dims
        t, r, d, a = self.dims
        self.axes = [np.arange(n) / (n - 1) if n > 1 else np.zeros(1) for n in (r, d, a)]
        energy = (np.abs(self.values) ** 2).sum(axis=(0, 2, 3))
        total = energy.sum()
        self.range_prob = energy / total if total > 0 else np.full(r, 1.0 / r)
        self._enc_cache = {}

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def coords(self, flat: np.ndarray):
        """Normalized (r, d, a) coordinates and frame index of flat cube indices."""
        t, r, d, a = np.unravel_index(flat, self.dims)
        return np.column_stack([self.axes[0][r], self.axes[1][d], self.axes[2][a]]), t

    def encode(self, arch: InrArch, flat: np.ndarray):
        """Encoder inputs and frame indices for flat cube indices."""
        if not arch.modulated:
            coords, t = self.coords(flat)
            return encode_inputs(arch, coords, t), t
        table = self._enc_cache.get(arch.encoding)
        if table is None:
            _, r, d, a = self.dims
            rr, dd, aa = np.meshgrid(*self.axes, indexing="ij")
            grid = np.column_stack([rr.ravel(), dd.ravel(), aa.ravel()])
            table = self._enc_cache[arch.encoding] = encode_inputs(arch, grid, np.zeros(len(grid), dtype=np.int64))
        t, spatial = np.divmod(flat, table.shape[0])
        return table[spatial], t

    def plane_indices(self, plane_ids: np.ndarray) -> np.ndarray:
        """Flat indices of whole RD planes; plane id = t * A + a."""
        t_count, r, d, a = self.dims
        t, ant = np.divmod(plane_ids, a)
        rr, dd = np.meshgrid(np.arange(r), np.arange(d), indexing="ij")
        base = (rr * d + dd) * a
        return ((t[:, None, None] * r * d * a) + base[None] + ant[:, None, None]).reshape(-1)


@dataclass
class Batch:
    points: np.ndarray  # flat cube indices for the MSE term
    planes: np.ndarray  # plane ids (t * A + a) for the SSIM / perceptual terms


def draw_batch(target: Target, cfg: FitConfig, rng: np.random.Generator) -> Batch:
    """Energy-weighted range sampling for a fraction of the batch, uniform for the rest."""
    t_count, r, d, a = target.dims
    if cfg.batch_size > target.size:
        raise ValueError(f"batch of {cfg.batch_size} exceeds the {target.size} cube coordinates")
    n_act = int(round(cfg.activity_fraction * cfg.batch_size))
    rb = rng.choice(r, size=n_act, p=target.range_prob)
    tb = rng.integers(0, t_count, size=n_act)
    db = rng.integers(0, d, size=n_act)
    ab = rng.integers(0, a, size=n_act)
    active = ((tb * r + rb) * d + db) * a + ab
    uniform = rng.integers(0, target.size, size=cfg.batch_size - n_act)
    n_planes = min(cfg.planes_per_epoch, t_count * a)
    planes = rng.choice(t_count * a, size=n_planes, replace=False)
    return Batch(np.concatenate([active, uniform]), np.sort(planes))


@dataclass
class LossTerms:
    total: float
    mse: float
    ssim: float
    perceptual: float


def _as_components(z: np.ndarray) -> np.ndarray:
    return np.column_stack([z.real, z.imag])


def loss_and_grad(
    arch: InrArch,
    pv: ParamVector,
    target: Target,
    batch: Batch,
    cfg: FitConfig,
    perceptual: losses.PerceptualExtractor,
    grad: bool = True,
    where: str = "",
):
    """Composite loss on one batch; returns ``(LossTerms, dL/dpv or None, dL/dy)``.

    The third value is the gradient w.r.t. the network outputs of the batch
    rows, used when chaining into a hypernetwork.
    """
    n_theta = arch.theta_layout().size
    theta = ParamVector(arch.theta_layout(), pv.values[:n_theta])
    mods = pv["mod"]
    plane_terms = cfg.w_ssim > 0 or cfg.w_perceptual > 0
    flat_pts = batch.points
    flat_planes = target.plane_indices(batch.planes)
    flat = np.concatenate([flat_pts, flat_planes]) if plane_terms else flat_pts
    enc, frames = target.encode(arch, flat)
    y, fcache = forward_batch(arch, theta, mods, enc, frames)
    if not plane_terms:
        # plane terms only reported; keep them out of the training arithmetic
        pe, pf = target.encode(arch, flat_planes)
        yp_all, _ = forward_batch(arch, theta, mods, pe, pf)
    else:
        yp_all = y[len(flat_pts):]

    nb = len(flat_pts)
    l_mse, g_mse = losses.mse(y[:nb], _as_components(target.values.reshape(-1)[flat_pts]))
    p_count = len(batch.planes)
    _, r, d, _ = target.dims
    yp = yp_all.reshape(p_count, r, d, 2)
    tp = target.values.reshape(-1)[flat_planes].reshape(p_count, r, d)
    pred = yp[..., 0] + 1j * yp[..., 1]
    cs, g_re, g_im = losses.cssim_planes(pred, tp, grad=True)
    l_ssim = 1.0 - cs
    mag_p = losses.magnitude(yp[..., 0], yp[..., 1])
    mag_t = losses.magnitude(tp.real, tp.imag)
    l_perc, g_mag = perceptual.loss(mag_p, mag_t, grad=True)

    check_finite("mse", l_mse, where)
    check_finite("ssim", l_ssim, where)
    check_finite("perceptual", l_perc, where)
    total = cfg.w_ssim * l_ssim + cfg.w_mse * l_mse + cfg.w_perceptual * l_perc
    terms = LossTerms(total, l_mse, l_ssim, l_perc)
    if not grad:
        return terms, None, None

    dy = np.zeros_like(y)
    if cfg.w_mse > 0:
        dy[:nb] = cfg.w_mse * g_mse
    if plane_terms:
        dp = np.zeros((p_count, r, d, 2))
        if cfg.w_ssim > 0:
            dp[..., 0] -= cfg.w_ssim * g_re
            dp[..., 1] -= cfg.w_ssim * g_im
        if cfg.w_perceptual > 0:
            dp[..., 0] += cfg.w_perceptual * g_mag * yp[..., 0] / mag_p
            dp[..., 1] += cfg.w_perceptual * g_mag * yp[..., 1] / mag_p
        dy[nb:] = dp.reshape(-1, 2)
    dtheta, dmods = backward_batch(arch, theta, dy, fcache)
    g = ParamVector(pv.layout, np.concatenate([dtheta.values, dmods.ravel()]))
    return terms, g, dy


@dataclass
class FitReport:
    total: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    perceptual: list = field(default_factory=list)
    final_cssim: float = float("nan")
    final_psnr: float = float("nan")
    final_mse: float = float("nan")
    seconds: float = 0.0

    def record(self, terms: LossTerms):
        self.total.append(terms.total)
        self.mse.append(terms.mse)
        self.ssim.append(terms.ssim)
        self.perceptual.append(terms.perceptual)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "total", "mse", "ssim", "perceptual"])
            for i, row in enumerate(zip(self.total, self.mse, self.ssim, self.perceptual)):
                w.writerow([i] + [repr(float(v)) for v in row])


def fold_scale(params: InrParams, scale: float) -> InrParams:
    """Multiply the linear output layer so the INR emits values at ``scale``."""
    pv = ParamVector(params.arch.theta_layout(), params.theta.copy())
    pv["Wout"] = pv["Wout"] * scale
    pv["bout"] = pv["bout"] * scale
    return InrParams(params.arch, pv.values, params.modulations)


def fit_instance(cube: ComplexCube, arch: InrArch = InrArch(), cfg: FitConfig = FitConfig(), progress=None):
    """Fit one INR to ``cube``; returns ``(InrParams, FitReport)``.

    Returned parameters are float32-representable, so writing and reading
    them back reproduces the same samples.
    """
    if arch.n_frames != cube.dims[0]:
        raise ValueError(f"cube has {cube.dims[0]} frames but arch expects {arch.n_frames}")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    target = Target(cube)
    perceptual = losses.PerceptualExtractor(cfg.perceptual_seed)
    pv = init_params(arch, rng).to_vector()
    state = AdamState.fresh(pv.layout, lr=cfg.lr)
    report = FitReport()
    for epoch in range(cfg.epochs):
        batch = draw_batch(target, cfg, rng)
        terms, g, _ = loss_and_grad(arch, pv, target, batch, cfg, perceptual, where=f"at epoch {epoch}")
        report.record(terms)
        pv, state = adam_step(pv, g, state)
        if progress is not None:
            progress(epoch, terms)
    params = fold_scale(InrParams.from_vector(arch, pv), target.scale).quantized()
    recon = sample(params, SamplePlan.grid(), cube.dims)
    report.final_cssim = cssim(recon, cube)
    report.final_psnr = psnr(recon, cube)
    report.final_mse = cube_mse(recon, cube)
    report.seconds = time.perf_counter() - start
    log.info("fit done: cssim=%.4f psnr=%.2f dB in %.1fs", report.final_cssim, report.final_psnr, report.seconds)
    return params, report
