"""Context-conditioned INR generation.

A top-down reflectivity raster of the scene goes through a small CNN to
``z_e``; the scatterer trajectory goes through a per-frame embedding and one
single-head self-attention block to ``z_p(t)``. Two MLP heads then emit the
INR: shared weights from ``[z_e, mean_t z_p(t)]`` and per-frame modulations
from ``[z_e, z_p(t)]``, with ``gamma = 1 + tanh(.)`` so an untrained head
starts near identity modulation.

Weights file (little-endian)::

    "MMWH" | u32 version=1 | 13 x u32 network dims | 3 x u32 cube (R, D, A)
    | f32 output_scale | f32 weights in layout order
"""

from __future__ import annotations

import logging
import math
import os
import struct
import time
from dataclasses import astuple, dataclass, field

import numpy as np

from . import losses
from .cube import (
    BadMagicError,
    ComplexCube,
    LengthMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .engine import (
    AdamState,
    Layout,
    ParamVector,
    adam_step,
    attention,
    attention_backward,
    conv2d,
    conv2d_backward,
    conv_out_size,
    dense,
    dense_backward,
    relu,
)
from .fit import FitConfig, Target, draw_batch, loss_and_grad
from .inr import VARIANTS, InrArch, InrParams, SamplePlan, init_params, param_count, sample
from .metrics import cssim
from .sim import Scene, Trajectory

log = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"MMWH"
WEIGHTS_VERSION = 1
_W_HEADER = struct.Struct("<4sI16I")


# --- scene raster --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SceneRaster:
    grid: np.ndarray
    extent: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 2 or np.any(g < 0):
            raise ValueError("raster must be a 2-D non-negative grid")
        object.__setattr__(self, "grid", g)


def rasterize(scene: Scene, dims: tuple[int, int] = (32, 32)) -> SceneRaster:
    """Top-down (x rows, y columns) grid; each reflector adds its amplitude to its cell."""
    nx, ny = dims
    x0, x1, y0, y1 = scene.extent[:4]
    grid = np.zeros((nx, ny))
    for (x, y, _), amp in zip(scene.positions, scene.amplitudes):
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise ValueError(f"reflector at ({x}, {y}) outside the room extent")
        i = min(int((x - x0) / (x1 - x0) * nx), nx - 1)
        j = min(int((y - y0) / (y1 - y0) * ny), ny - 1)
        grid[i, j] += amp
    return SceneRaster(grid, (x0, x1, y0, y1))


# --- network definition ------------------------------------------------------------


@dataclass(frozen=True)
class HyperConfig:
    arch: InrArch = field(default_factory=InrArch)
    raster: tuple[int, int] = (32, 32)
    env_channels: tuple[int, int] = (8, 16)
    latent: int = 64
    d_model: int = 64
    head_width: int = 256
    n_tracks: int = 4

    def header(self) -> tuple[int, ...]:
        a = self.arch
        return (
            a.n_freqs, a.width, a.depth, a.n_frames, VARIANTS.index(a.variant),
            *self.raster, *self.env_channels, self.latent, self.d_model, self.head_width, self.n_tracks,
        )

    @classmethod
    def from_header(cls, vals) -> "HyperConfig":
        l_, w, h, t, code, rx, ry, c1, c2, e, dm, hw, k = vals
        if code >= len(VARIANTS):
            raise LengthMismatchError(f"unknown variant code {code}")
        return cls(InrArch(l_, w, h, t, VARIANTS[code]), (rx, ry), (c1, c2), e, dm, hw, k)

    @property
    def env_flat(self) -> int:
        h, w = self.raster
        for _ in range(2):
            h, w = conv_out_size(h), conv_out_size(w)
        return self.env_channels[1] * h * w

    @property
    def mod_out(self) -> int:
        return self.arch.depth * 2 * self.arch.width

    def layout(self) -> Layout:
        if not self.arch.modulated:
            raise ValueError("the hypernetwork emits modulated INRs only")
        c1, c2 = self.env_channels
        e, dm, hw = self.latent, self.d_model, self.head_width
        n_theta = param_count(self.arch)[0]
        return Layout.of(
            ("env_c1_w", (c1, 1, 3, 3)), ("env_c1_b", (c1,)),
            ("env_c2_w", (c2, c1, 3, 3)), ("env_c2_b", (c2,)),
            ("env_fc_w", (e, self.env_flat)), ("env_fc_b", (e,)),
            ("pose_emb_w", (dm, 3 * self.n_tracks)), ("pose_emb_b", (dm,)),
            ("att_q", (dm, dm)), ("att_k", (dm, dm)), ("att_v", (dm, dm)),
            ("pose_out_w", (e, dm)), ("pose_out_b", (e,)),
            ("th_h_w", (hw, 2 * e)), ("th_h_b", (hw,)),
            ("th_o_w", (n_theta, hw)), ("th_o_b", (n_theta,)),
            ("md_h_w", (hw, 2 * e)), ("md_h_b", (hw,)),
            ("md_o_w", (self.mod_out, hw)), ("md_o_b", (self.mod_out,)),
        )


# final-layer weights start this small relative to the uniform fan-in bound
HEAD_INIT_GAIN = 0.01


class HyperNet:
    """Weights of the encoders and heads plus the training output scale."""

    def __init__(self, config: HyperConfig, weights: ParamVector | None = None, output_scale: float = 1.0, cube_dims=None):
        self.config = config
        # (T, R, D, A) of the training cubes, when known
        self.cube_dims = tuple(int(v) for v in cube_dims) if cube_dims is not None else None
        layout = config.layout()
        if weights is not None and weights.layout != layout:
            raise ValueError("weights layout does not match the config")
        self.weights = weights if weights is not None else ParamVector(layout)
        self.output_scale = float(output_scale)

    @classmethod
    def initialize(cls, config: HyperConfig, seed: int = 0) -> "HyperNet":
        rng = np.random.default_rng(seed)
        pv = ParamVector(config.layout())
        for name, shape in pv.layout.segments:
            if name.endswith("_b") or len(shape) == 1:
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(1.0 / fan_in)
            if name in ("th_o_w", "md_o_w"):
                bound *= HEAD_INIT_GAIN
            pv[name] = rng.uniform(-bound, bound, size=shape)
        pv["th_o_b"] = init_params(config.arch, rng).theta
        return cls(config, pv)

    # forward pieces -------------------------------------------------------------

    def env_encode(self, raster: SceneRaster, keep: bool = False):
        w = self.weights
        if raster.grid.shape != tuple(self.config.raster):
            raise ValueError(f"raster {raster.grid.shape} does not match config {self.config.raster}")
        x = raster.grid[None, None]
        z1, c1 = conv2d(x, w["env_c1_w"], w["env_c1_b"])
        a1 = relu(z1)
        z2, c2 = conv2d(a1, w["env_c2_w"], w["env_c2_b"])
        a2 = relu(z2)
        flat = a2.reshape(1, -1)
        ze = dense(flat, w["env_fc_w"], w["env_fc_b"])[0]
        return (ze, (c1, z1, c2, z2, flat)) if keep else ze

    def pose_encode(self, positions: np.ndarray, keep: bool = False):
        w = self.weights
        p = np.asarray(positions, dtype=np.float64)
        t, k = p.shape[0], p.shape[1]
        if k != self.config.n_tracks or t != self.config.arch.n_frames:
            raise ValueError(
                f"trajectory ({t} frames, {k} tracks) does not match config "
                f"({self.config.arch.n_frames} frames, {self.config.n_tracks} tracks)"
            )
        flat = p.reshape(t, -1)
        h = dense(flat, w["pose_emb_w"], w["pose_emb_b"])
        u, acache = attention(h, w["att_q"], w["att_k"], w["att_v"])
        zp = dense(u, w["pose_out_w"], w["pose_out_b"])
        return (zp, (flat, h, u, acache)) if keep else zp

    def generate(self, ze: np.ndarray, zp: np.ndarray, keep: bool = False):
        """Emit raw (unscaled) INR parameters from the context codes."""
        w, cfg = self.weights, self.config
        arch = cfg.arch
        t = zp.shape[0]
        pooled = np.concatenate([ze, zp.mean(axis=0)])[None]
        a_th = relu(dense(pooled, w["th_h_w"], w["th_h_b"]))
        theta = dense(a_th, w["th_o_w"], w["th_o_b"])[0]
        ctx = np.concatenate([np.broadcast_to(ze, (t, ze.size)), zp], axis=1)
        a_md = relu(dense(ctx, w["md_h_w"], w["md_h_b"]))
        raw = dense(a_md, w["md_o_w"], w["md_o_b"]).reshape(t, arch.depth, 2, arch.width)
        gamma = np.tanh(raw[:, :, 0])
        mods = np.empty_like(raw)
        mods[:, :, 0] = 1.0 + gamma
        mods[:, :, 1] = raw[:, :, 1]
        params = InrParams(arch, theta, mods)
        return (params, (pooled, a_th, ctx, a_md, gamma)) if keep else params

    def forward(self, raster: SceneRaster, positions: np.ndarray):
        ze, ecache = self.env_encode(raster, keep=True)
        zp, pcache = self.pose_encode(positions, keep=True)
        params, gcache = self.generate(ze, zp, keep=True)
        return params, (ecache, pcache, gcache, ze, zp)

    def backward(self, cache, dtheta: np.ndarray, dmods: np.ndarray) -> ParamVector:
        """Chain INR-parameter gradients into the hypernetwork weights."""
        ecache, pcache, gcache, ze, zp = cache
        pooled, a_th, ctx, a_md, gamma = gcache
        w, cfg = self.weights, self.config
        g = ParamVector(w.layout)
        e = cfg.latent
        t = zp.shape[0]

        draw = np.empty_like(dmods)
        draw[:, :, 0] = dmods[:, :, 0] * (1.0 - gamma * gamma)
        draw[:, :, 1] = dmods[:, :, 1]
        draw = draw.reshape(t, -1)
        da, g["md_o_w"], g["md_o_b"] = dense_backward(draw, a_md, w["md_o_w"])
        da = da * (a_md > 0)
        dctx, g["md_h_w"], g["md_h_b"] = dense_backward(da, ctx, w["md_h_w"])
        dze = dctx[:, :e].sum(axis=0)
        dzp = dctx[:, e:].copy()

        da, g["th_o_w"], g["th_o_b"] = dense_backward(dtheta[None], a_th, w["th_o_w"])
        da = da * (a_th > 0)
        dpool, g["th_h_w"], g["th_h_b"] = dense_backward(da, pooled, w["th_h_w"])
        dze += dpool[0, :e]
        dzp += dpool[0, e:] / t

        flat, h, u, acache = pcache
        du, g["pose_out_w"], g["pose_out_b"] = dense_backward(dzp, u, w["pose_out_w"])
        dh, g["att_q"], g["att_k"], g["att_v"] = attention_backward(du, acache)
        _, g["pose_emb_w"], g["pose_emb_b"] = dense_backward(dh, flat, w["pose_emb_w"])

        c1, z1, c2, z2, eflat = ecache
        dflat, g["env_fc_w"], g["env_fc_b"] = dense_backward(dze[None], eflat, w["env_fc_w"])
        dz2 = dflat.reshape(z2.shape) * (z2 > 0)
        da1, g["env_c2_w"], g["env_c2_b"] = conv2d_backward(dz2, c2)
        _, g["env_c1_w"], g["env_c1_b"] = conv2d_backward(da1 * (z1 > 0), c1, need_input_grad=False)
        return g

    def scaled(self, params: InrParams) -> InrParams:
        from .fit import fold_scale

        return fold_scale(params, self.output_scale)


# --- spec-level functional API ---------------------------------------------------


def env_encode(raster: SceneRaster, net: HyperNet) -> np.ndarray:
    return net.env_encode(raster)


def pose_encode(traj: Trajectory, net: HyperNet) -> np.ndarray:
    return net.pose_encode(traj.positions)


def hyper_generate(ze: np.ndarray, zp: np.ndarray, net: HyperNet, arch: InrArch | None = None) -> InrParams:
    """INR parameters at the output scale of the trained network."""
    if arch is not None and arch != net.config.arch:
        raise ValueError(f"arch {arch} does not match the hypernetwork's {net.config.arch}")
    return net.scaled(net.generate(ze, zp))


def generate_signal(scene: Scene, traj: Trajectory, net: HyperNet, plan: SamplePlan = SamplePlan(), dims=None, threads: int = 1) -> ComplexCube:
    """rasterize -> encode -> generate -> sample."""
    cfg = net.config
    raster = rasterize(scene, cfg.raster)
    params = hyper_generate(env_encode(raster, net), pose_encode(traj, net), net)
    dims = dims if dims is not None else net.cube_dims
    if dims is None:
        raise ValueError("generate_signal needs base cube dims (T, R, D, A)")
    return sample(params, plan, dims, threads=threads)


# --- training --------------------------------------------------------------------


@dataclass(frozen=True)
class HyperTrainConfig:
    epochs: int = 1000
    lr: float = 1e-4
    batch_size: int = 16384
    w_ssim: float = 0.5
    w_mse: float = 0.3
    w_perceptual: float = 0.2
    activity_fraction: float = 0.5
    planes_per_epoch: int = 2
    seed: int = 0
    perceptual_seed: int = 0

    def fit_config(self) -> FitConfig:
        return FitConfig(
            epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, w_ssim=self.w_ssim, w_mse=self.w_mse,
            w_perceptual=self.w_perceptual, activity_fraction=self.activity_fraction,
            planes_per_epoch=self.planes_per_epoch, seed=self.seed, perceptual_seed=self.perceptual_seed,
        )


@dataclass
class HyperTrainReport:
    step_loss: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)
    item_cssim: list = field(default_factory=list)
    seconds: float = 0.0


def _prepare(dataset, config: HyperConfig):
    items = []
    dims = dataset[0][2].dims
    for scene, traj, cube in dataset:
        if cube.dims != dims:
            raise ValueError(f"dataset cubes differ in dims: {cube.dims} vs {dims}")
        if cube.dims[0] != config.arch.n_frames:
            raise ValueError(f"cube with {cube.dims[0]} frames; arch expects {config.arch.n_frames}")
        items.append((rasterize(scene, config.raster), traj.positions, cube))
    return items


def hyper_loss_and_grad(
    net: HyperNet, raster, positions, target: Target, batch, fcfg: FitConfig, perceptual, grad=True, where=""
):
    """Composite fit loss of the generated INR and its gradient w.r.t. the hypernetwork."""
    params, cache = net.forward(raster, positions)
    arch = net.config.arch
    terms, g, _ = loss_and_grad(arch, params.to_vector(), target, batch, fcfg, perceptual, grad=grad, where=where)
    if not grad:
        return terms, None
    n_theta = param_count(arch)[0]
    return terms, net.backward(cache, g.values[:n_theta], g["mod"])


def hyper_train(dataset, config: HyperConfig = HyperConfig(), tcfg: HyperTrainConfig = HyperTrainConfig(), progress=None):
    """Train on ``(Scene, Trajectory, ComplexCube)`` items; one Adam step per item per epoch.

    Cubes are scaled by a single dataset-wide peak so generated signals can
    be rescaled without knowing the target.
    """
    if not dataset:
        raise ValueError("hyper_train needs a non-empty dataset")
    start = time.perf_counter()
    items = _prepare(dataset, config)
    scale = max(float(np.abs(c.data).max()) for _, _, c in items) or 1.0
    targets = [Target(c, scale) for _, _, c in items]
    fcfg = tcfg.fit_config()
    perceptual = losses.PerceptualExtractor(tcfg.perceptual_seed)
    rng = np.random.default_rng(tcfg.seed)
    net = HyperNet.initialize(config, seed=tcfg.seed)
    net.output_scale = scale
    net.cube_dims = items[0][2].dims
    state = AdamState.fresh(net.weights.layout, lr=tcfg.lr)
    report = HyperTrainReport()
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(items))
        running = 0.0
        for i in order:
            raster, positions, _ = items[i]
            batch = draw_batch(targets[i], fcfg, rng)
            where = f"at epoch {epoch}, item {i}"
            terms, g = hyper_loss_and_grad(net, raster, positions, targets[i], batch, fcfg, perceptual, where=where)
            net.weights, state = adam_step(net.weights, g, state)
            report.step_loss.append(terms.total)
            running += terms.total
        report.epoch_loss.append(running / len(items))
        if progress is not None:
            progress(epoch, report.epoch_loss[-1])
    net = quantize(net)
    for raster, positions, cube in items:
        params = net.scaled(net.forward(raster, positions)[0])
        report.item_cssim.append(cssim(sample(params, SamplePlan.grid(), cube.dims), cube))
    report.seconds = time.perf_counter() - start
    log.info("hyper_train: mean cssim %.4f in %.1fs", float(np.mean(report.item_cssim)), report.seconds)
    return net, report


# --- file format -------------------------------------------------------------------


def weights_write(net: HyperNet, path) -> None:
    with open(path, "wb") as fh:
        cube = net.cube_dims[1:] if net.cube_dims is not None else (0, 0, 0)
        fh.write(_W_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, *net.config.header(), *cube))
        fh.write(np.float32(net.output_scale).astype("<f4").tobytes())
        fh.write(net.weights.values.astype("<f4").tobytes())


def weights_read(path) -> HyperNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    where = os.fspath(path)
    if raw[:4] != WEIGHTS_MAGIC:
        raise BadMagicError(f"{where}: bad magic {raw[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    if len(raw) < _W_HEADER.size:
        raise TruncatedPayloadError(f"{where}: header truncated")
    _, version, *dims = _W_HEADER.unpack_from(raw)
    if version != WEIGHTS_VERSION:
        raise VersionMismatchError(f"{where}: version {version}, expected {WEIGHTS_VERSION}")
    config = HyperConfig.from_header(dims[:13])
    cube_dims = (config.arch.n_frames, *dims[13:]) if all(dims[13:]) else None
    layout = config.layout()
    body = raw[_W_HEADER.size:]
    if len(body) != 4 * (1 + layout.size):
        raise LengthMismatchError(f"{where}: {len(body) // 4} values stored, config needs {1 + layout.size}")
    vals = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return HyperNet(config, ParamVector(layout, vals[1:].copy()), float(vals[0]), cube_dims)


def quantize(net: HyperNet) -> HyperNet:
    """Copy of ``net`` rounded to the on-disk float32 precision."""
    vals = net.weights.values.astype(np.float32).astype(np.float64)
    return HyperNet(net.config, ParamVector(net.weights.layout, vals), float(np.float32(net.output_scale)), net.cube_dims)
