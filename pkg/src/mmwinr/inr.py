"""Coordinate MLPs for radar cubes.

Two variants:

* ``modulated`` - PE(r, d, a) through H hidden layers whose pre-activations
  are scaled and shifted per frame: ``h = relu(gamma_l(t) * (W_l h + b_l) + beta_l(t))``;
  a linear, unmodulated output layer gives (real, imag).
* ``base`` - PE(t, r, d, a) through the same stack with no modulation.

The flat weight vector is layer-ordered ``W1, b1, ..., Wout, bout``;
modulations are an array ``(T, H, 2, W)`` holding gamma then beta.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cube import (
    BadMagicError,
    ComplexCube,
    LengthMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
    _check_dims,
    axis_coords,
)
from .encoding import EncodingConfig, positional_encode
from .engine import Layout, ParamVector, dense, dense_backward, relu

PARAMS_MAGIC = b"MMWI"
PARAMS_VERSION = 1
_PARAMS_HEADER = struct.Struct("<4sIIIIII")
VARIANTS = ("modulated", "base")
AUGMENT_DIVISIONS = 8
MAX_AUGMENT_RADIUS = 7
_CHUNK = 32768


@dataclass(frozen=True)
class InrArch:
    n_freqs: int = 8
    width: int = 32
    depth: int = 4
    n_frames: int = 20
    variant: str = "modulated"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.width < 1 or self.depth < 1 or self.n_frames < 1 or self.n_freqs < 0:
            raise ValueError(f"invalid arch {self}")

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.n_freqs, True, 3 if self.variant == "modulated" else 4)

    @property
    def in_dim(self) -> int:
        return self.encoding.output_dim

    @property
    def modulated(self) -> bool:
        return self.variant == "modulated"

    def theta_layout(self) -> Layout:
        segs, fan_in = [], self.in_dim
        for i in range(1, self.depth + 1):
            segs += [(f"W{i}", (self.width, fan_in)), (f"b{i}", (self.width,))]
            fan_in = self.width
        segs += [("Wout", (2, self.width)), ("bout", (2,))]
        return Layout.of(*segs)

    def mod_shape(self) -> tuple[int, int, int, int]:
        return (self.n_frames, self.depth, 2, self.width) if self.modulated else (0, self.depth, 2, self.width)

    def layout(self) -> Layout:
        """Joint layout of weights and modulations (the fitted parameter vector)."""
        tl = self.theta_layout()
        return Layout(tl.segments + (("mod", self.mod_shape()),))


def param_count(arch: InrArch) -> tuple[int, int, int]:
    """``(theta, modulation, total)`` parameter counts."""
    w, h, d_in = arch.width, arch.depth, arch.in_dim
    theta = d_in * w + w + (h - 1) * (w * w + w) + (w * 2 + 2)
    mods = arch.n_frames * h * 2 * w if arch.modulated else 0
    return theta, mods, theta + mods


def compression_ratio(dims, arch: InrArch) -> tuple[int, int, float]:
    """``(real values in the cube, INR parameters, ratio)``."""
    t, r, d, a = (int(x) for x in dims)
    points = t * r * d * a * 2
    total = param_count(arch)[2]
    return points, total, points / total


@dataclass(frozen=True, eq=False)
class InrParams:
    arch: InrArch
    theta: np.ndarray
    modulations: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        mods = np.asarray(self.modulations, dtype=np.float64)
        n_theta, n_mod, _ = param_count(self.arch)
        if th.size != n_theta:
            raise ValueError(f"theta has {th.size} values, arch needs {n_theta}")
        if mods.size != n_mod:
            raise ValueError(f"modulations have {mods.size} values, arch needs {n_mod}")
        mods = mods.reshape(self.arch.mod_shape())
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(mods))):
            raise ValueError("INR parameters must be finite")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "modulations", mods)

    @classmethod
    def from_vector(cls, arch: InrArch, pv: ParamVector) -> "InrParams":
        n_theta = param_count(arch)[0]
        return cls(arch, pv.values[:n_theta].copy(), pv["mod"].copy())

    def to_vector(self) -> ParamVector:
        return ParamVector(self.arch.layout(), np.concatenate([self.theta, self.modulations.ravel()]))

    def quantized(self) -> "InrParams":
        """Round-trip the values through float32 (the on-disk precision)."""
        f = lambda x: x.astype(np.float32).astype(np.float64)  # noqa: E731
        return InrParams(self.arch, f(self.theta), f(self.modulations))

    def __eq__(self, other):
        if not isinstance(other, InrParams):
            return NotImplemented
        return (
            self.arch == other.arch
            and np.array_equal(self.theta, other.theta)
            and np.array_equal(self.modulations, other.modulations)
        )


def init_params(arch: InrArch, rng: np.random.Generator) -> InrParams:
    """Weights and biases uniform in +-sqrt(1/fan_in); identity modulation."""
    tl = arch.theta_layout()
    pv = ParamVector(tl)
    for name, shape in tl.segments:
        fan_in = pv[f"W{name[1:]}" if name.startswith("b") else name].shape[1]
        bound = np.sqrt(1.0 / fan_in)
        pv[name] = rng.uniform(-bound, bound, size=shape)
    mods = np.zeros(arch.mod_shape())
    mods[:, :, 0, :] = 1.0
    return InrParams(arch, pv.values, mods)


# --- batched forward / backward --------------------------------------------------


def encode_inputs(arch: InrArch, coords: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Encoder input for normalized spatial ``coords`` (N, 3) at integer ``frames``."""
    if arch.modulated:
        return positional_encode(coords, arch.encoding)
    t_norm = frames / (arch.n_frames - 1) if arch.n_frames > 1 else np.zeros(len(frames))
    return positional_encode(np.column_stack([t_norm, coords]), arch.encoding)


def forward_batch(arch: InrArch, theta: ParamVector, mods: np.ndarray | None, enc: np.ndarray, frames: np.ndarray):
    """Evaluate the network on encoded inputs; returns ``(y (N, 2), cache)``."""
    h = enc
    cache = []
    for i in range(1, arch.depth + 1):
        z = dense(h, theta[f"W{i}"], theta[f"b{i}"])
        if arch.modulated:
            g = mods[frames, i - 1, 0]
            u = g * z + mods[frames, i - 1, 1]
        else:
            g, u = None, z
        cache.append((h, z, g, u))
        h = relu(u)
    y = dense(h, theta["Wout"], theta["bout"])
    return y, (h, cache, frames)


def backward_batch(arch: InrArch, theta: ParamVector, dy: np.ndarray, fcache):
    """Gradients of a scalar loss w.r.t. weights (ParamVector) and modulations."""
    h_last, cache, frames = fcache
    dtheta = ParamVector(theta.layout)
    dmods = np.zeros(arch.mod_shape())
    # frame one-hot (T, N): per-frame sums as a fixed-shape matmul
    onehot = (frames[None, :] == np.arange(arch.n_frames)[:, None]).astype(np.float64) if arch.modulated else None
    dh, dtheta["Wout"], dtheta["bout"] = dense_backward(dy, h_last, theta["Wout"])
    for i in range(arch.depth, 0, -1):
        h, z, g, u = cache[i - 1]
        du = dh * (u > 0)
        if arch.modulated:
            dmods[:, i - 1, 0] = onehot @ (du * z)
            dmods[:, i - 1, 1] = onehot @ du
            dz = du * g
        else:
            dz = du
        dh, dtheta[f"W{i}"], dtheta[f"b{i}"] = dense_backward(dz, h, theta[f"W{i}"])
    return dtheta, dmods


def _evaluate(params: InrParams, coords: np.ndarray, frames: np.ndarray) -> np.ndarray:
    arch = params.arch
    theta = ParamVector(arch.theta_layout(), params.theta)
    out = np.empty(len(coords), dtype=np.complex128)
    for s in range(0, len(coords), _CHUNK):
        sl = slice(s, s + _CHUNK)
        enc = encode_inputs(arch, coords[sl], frames[sl])
        y, _ = forward_batch(arch, theta, params.modulations, enc, frames[sl])
        out[sl] = y[:, 0] + 1j * y[:, 1]
    return out


def inr_forward(params: InrParams, x, t) -> np.ndarray:
    """Complex output at normalized coords ``x`` ((3,) or (N, 3)) for frame(s) ``t``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    coords = np.atleast_2d(x)
    if coords.shape[1] != 3:
        raise ValueError("coordinates must be (r, d, a) triples")
    if not np.all(np.isfinite(coords)):
        raise ValueError("inr_forward: non-finite coordinate")
    frames = np.broadcast_to(np.asarray(t, dtype=np.int64), (len(coords),)).copy()
    if np.any(frames < 0) or np.any(frames >= params.arch.n_frames):
        raise IndexError(f"frame out of range for {params.arch.n_frames} frames")
    out = _evaluate(params, coords, frames)
    return out[0] if single else out


# --- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class SamplePlan:
    mode: str = "grid"
    factors: tuple[int, int, int] = (1, 1, 1)
    radius: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("grid", "super", "augment"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        f = tuple(int(x) for x in self.factors)
        if len(f) != 3 or any(x < 1 for x in f) or any(x != y for x, y in zip(f, self.factors)):
            raise ValueError(f"super-resolution factors must be 3 integers >= 1, got {self.factors!r}")
        if self.radius != int(self.radius) or not 0 <= self.radius <= MAX_AUGMENT_RADIUS:
            raise ValueError(f"augment radius must be an integer in [0, {MAX_AUGMENT_RADIUS}]")
        object.__setattr__(self, "factors", f)

    @classmethod
    def grid(cls) -> "SamplePlan":
        return cls("grid")

    @classmethod
    def super_res(cls, n_r: int, n_d: int, n_a: int) -> "SamplePlan":
        return cls("super", (n_r, n_d, n_a))

    @classmethod
    def augment(cls, radius: int, seed: int = 0) -> "SamplePlan":
        return cls("augment", radius=radius, seed=seed)

    def axes(self, dims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Normalized (r, d, a) coordinate lists for a base cube of ``dims``."""
        _, *sizes = _check_dims(dims)
        if self.mode == "grid":
            return tuple(axis_coords(n) for n in sizes)
        if self.mode == "super":
            out = []
            for n, k in zip(sizes, self.factors):
                if n == 1:
                    if k != 1:
                        raise ValueError("super-resolution factor must be 1 on a single-bin axis")
                    out.append(np.zeros(1))
                else:
                    # k*n points at bin positions i/k; i = j*k lands exactly on bin j
                    out.append(np.arange(k * n, dtype=np.float64) / (k * (n - 1)))
            return tuple(out)
        rng = np.random.default_rng(self.seed)
        width = self.radius / AUGMENT_DIVISIONS
        out = []
        for n in sizes:
            offsets = rng.random(n) * width
            out.append(np.zeros(1) if n == 1 else (np.arange(n) + offsets) / (n - 1))
        return tuple(out)

    def counts(self, dims) -> dict:
        """Emitted grid points and the nominal ``n_r * n_d * n_a * N_orig`` count."""
        t = _check_dims(dims)[0]
        r, d, a = (len(c) for c in self.axes(dims))
        n_orig = int(np.prod(dims))
        nominal = n_orig * (int(np.prod(self.factors)) if self.mode == "super" else 1)
        return {"emitted": t * r * d * a, "nominal": nominal, "original": n_orig}


def sample(params: InrParams, plan: SamplePlan, base_dims, threads: int = 1) -> ComplexCube:
    """Evaluate the INR on the plan's coordinate grid for every frame."""
    t, *_ = _check_dims(base_dims)
    if t != params.arch.n_frames:
        raise ValueError(f"plan covers {t} frames but the INR has {params.arch.n_frames}")
    r, d, a = plan.axes(base_dims)
    rr, dd, aa = np.meshgrid(r, d, a, indexing="ij")
    coords = np.stack([rr.ravel(), dd.ravel(), aa.ravel()], axis=1)

    def frame(ti):
        return _evaluate(params, coords, np.full(len(coords), ti, dtype=np.int64)).reshape(rr.shape)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(frame, range(t)))
    else:
        frames = [frame(ti) for ti in range(t)]
    return ComplexCube(np.stack(frames, axis=0))


# --- file format ---------------------------------------------------------------


def params_write(params: InrParams, path) -> None:
    a = params.arch
    with open(path, "wb") as fh:
        fh.write(
            _PARAMS_HEADER.pack(
                PARAMS_MAGIC, PARAMS_VERSION, a.n_freqs, a.width, a.depth, a.n_frames, VARIANTS.index(a.variant)
            )
        )
        fh.write(params.theta.astype("<f4").tobytes())
        fh.write(params.modulations.astype("<f4").tobytes())


def params_read(path) -> InrParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    where = os.fspath(path)
    if raw[:4] != PARAMS_MAGIC:
        raise BadMagicError(f"{where}: bad magic {raw[:4]!r}, expected {PARAMS_MAGIC!r}")
    if len(raw) < _PARAMS_HEADER.size:
        raise TruncatedPayloadError(f"{where}: header truncated")
    _, version, n_freqs, width, depth, n_frames, code = _PARAMS_HEADER.unpack_from(raw)
    if version != PARAMS_VERSION:
        raise VersionMismatchError(f"{where}: version {version}, expected {PARAMS_VERSION}")
    if code >= len(VARIANTS):
        raise LengthMismatchError(f"{where}: unknown variant code {code}")
    arch = InrArch(n_freqs, width, depth, n_frames, VARIANTS[code])
    n_theta, n_mod, total = param_count(arch)
    body = raw[_PARAMS_HEADER.size:]
    if len(body) != 4 * total:
        raise LengthMismatchError(f"{where}: {len(body) // 4} values stored, arch {arch} needs {total}")
    vals = np.frombuffer(body, dtype="<f4").astype(np.float64)
    return InrParams(arch, vals[:n_theta], vals[n_theta:])
