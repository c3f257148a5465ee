"""Synthetic FMCW radar: scenes, scripted activity programs, chirp-domain
simulation to range-Doppler cubes, and threshold point-cloud extraction.

Geometry: radar at the origin, boresight +x, lateral +y, up +z.
Azimuth ``phi = atan2(y, x)``, elevation ``psi = asin(z / range)``.
Positive radial velocity means approaching.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .cube import DEFAULT_ANGLE_BINS, ComplexCube, angle_spectrum, antenna_split

C_LIGHT = 299_792_458.0
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RadarConfig:
    carrier_hz: float = 79e9
    bandwidth_hz: float = 3.41e9
    n_chirps: int = 32  # Doppler bins D
    n_samples: int = 64  # range bins R
    chirp_interval_s: float = 100e-6
    frame_rate_hz: float = 10.0
    n_azimuth: int = 8
    n_elevation: int = 4
    element_spacing: float = 1.0  # in half-wavelengths

    def __post_init__(self):
        if self.n_samples < 2 or self.n_chirps < 2:
            raise ValueError("need at least 2 samples and 2 chirps")
        if self.n_azimuth < 0 or self.n_elevation < 0 or self.n_antennas < 1:
            raise ValueError("antenna layout must have at least one element")
        if self.bandwidth_hz <= 0 or self.carrier_hz <= 0 or self.chirp_interval_s <= 0:
            raise ValueError("carrier, bandwidth and chirp interval must be positive")

    @property
    def n_antennas(self) -> int:
        return self.n_azimuth + self.n_elevation

    @property
    def range_resolution(self) -> float:
        return C_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def max_range(self) -> float:
        # beyond half a bin below n_samples the beat tone wraps to bin 0
        return (self.n_samples - 0.5) * self.range_resolution

    @property
    def max_velocity(self) -> float:
        return C_LIGHT / (4.0 * self.carrier_hz * self.chirp_interval_s)

    @property
    def velocity_span(self) -> tuple[float, float]:
        """Radial velocities whose Doppler peak stays in place after fftshift.

        The top half-bin would round past the last bin and wrap to bin 0.
        """
        return -self.max_velocity, self.max_velocity * (1.0 - 1.0 / self.n_chirps)

    @property
    def frame_interval(self) -> float:
        return 1.0 / self.frame_rate_hz

    def dims(self, n_frames: int) -> tuple[int, int, int, int]:
        return (n_frames, self.n_samples, self.n_chirps, self.n_antennas)

    def doppler_bin(self, velocity: float) -> float:
        """Fractional Doppler bin (after fftshift) of a radial velocity."""
        fd = 2.0 * velocity * self.carrier_hz / C_LIGHT
        return self.n_chirps // 2 + fd * self.chirp_interval_s * self.n_chirps

    def range_bin(self, rng: float) -> float:
        return rng / self.range_resolution


@dataclass(frozen=True, eq=False)
class Scene:
    """Static reflectors inside a box ``(xmin, xmax, ymin, ymax, zmin, zmax)``."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extent: tuple[float, ...] = (0.0, 6.0, -3.0, 3.0, -1.5, 1.5)
    noise_std: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        ext = tuple(float(v) for v in self.extent)
        if len(ext) != 6 or not (ext[0] < ext[1] and ext[2] < ext[3] and ext[4] < ext[5]):
            raise ValueError(f"bad room extent {ext}")
        if pos.shape[0] != amp.shape[0]:
            raise ValueError("one amplitude per reflector")
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise ValueError("reflector amplitudes must be finite and >= 0")
        if not np.all(np.isfinite(pos)):
            raise ValueError("reflector positions must be finite")
        lo, hi = np.array(ext[0::2]), np.array(ext[1::2])
        if np.any(pos < lo) or np.any(pos > hi):
            raise ValueError("reflector outside room extent")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "extent", ext)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """K scatterer tracks over T frames: positions ``(T, K, 3)``, amplitudes ``(K,)``."""

    positions: np.ndarray
    amplitudes: np.ndarray
    frame_interval: float = 0.1

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (T>=1, K, 3), got {pos.shape}")
        amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        if amp.shape[0] != pos.shape[1]:
            raise ValueError("one amplitude per track")
        if not np.all(np.isfinite(pos)):
            raise ValueError("track positions must be finite")
        if np.any(amp < 0):
            raise ValueError("track amplitudes must be >= 0")
        if self.frame_interval <= 0:
            raise ValueError("frame_interval must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.positions.shape[1]

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.positions, axis=-1)

    def radial_velocities(self) -> np.ndarray:
        """Per-frame radial velocity (approaching positive), ``(T, K)``."""
        if self.n_frames < 2:
            return np.zeros((self.n_frames, self.n_tracks))
        return -np.gradient(self.ranges(), self.frame_interval, axis=0)

    @classmethod
    def empty(cls, n_frames: int, frame_interval: float = 0.1) -> "Trajectory":
        return cls(np.zeros((n_frames, 0, 3)), np.zeros(0), frame_interval)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


ACTIVITIES = ("wave", "walk", "jump", "still")

_ACTIVITY_DEFAULTS = {
    "center": (2.0, 0.0, 0.0),
    "n_scatterers": 4,
    "reflectivity": 1.0,
    "spread": 0.15,
    "frame_interval": 0.1,
    "amplitude": None,  # motion amplitude in meters, per-activity default below
    "frequency": 1.0,
    "speed": 1.0,
}
_MOTION_AMPLITUDE = {"wave": 0.2, "walk": 0.1, "jump": 0.15, "still": 0.0}


def activity_program(name: str, params: dict | None = None, n_frames: int = 20, seed: int = 0) -> Trajectory:
    """Scripted scatterer-cluster motion standing in for a pose sequence.

    ``wave`` oscillates the upper half of the cluster laterally, ``walk``
    translates the cluster toward the radar at ``speed`` with limb swing,
    ``jump`` moves everything on a vertical sinusoid, ``still`` holds.
    """
    if name not in ACTIVITIES:
        raise ValueError(f"unknown activity {name!r}; choose from {ACTIVITIES}")
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    p = dict(_ACTIVITY_DEFAULTS)
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown activity params {sorted(unknown)}")
    p.update(params or {})
    amp = _MOTION_AMPLITUDE[name] if p["amplitude"] is None else float(p["amplitude"])
    k = int(p["n_scatterers"])
    center = np.asarray(p["center"], dtype=np.float64)
    dt = float(p["frame_interval"])

    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-p["spread"], p["spread"], size=(k, 3))
    if k:
        offsets[0] = 0.0
    tau = np.arange(n_frames) * dt
    phase = 2.0 * math.pi * float(p["frequency"]) * tau
    pos = np.broadcast_to(center + offsets, (n_frames, k, 3)).copy()

    if name == "wave":
        arm = np.arange(k) >= k // 2
        pos[:, arm, 1] += amp * np.sin(phase)[:, None]
    elif name == "walk":
        heading = -center / np.linalg.norm(center)
        pos += (float(p["speed"]) * tau)[:, None, None] * heading
        swing = amp * np.sin(phase[:, None] + math.pi * (np.arange(k) % 2))
        swing[:, :1] = 0.0  # torso does not swing
        pos += swing[:, :, None] * heading
    elif name == "jump":
        pos[:, :, 2] += amp * np.sin(phase)[:, None]

    return Trajectory(pos, np.full(k, float(p["reflectivity"])), dt)


def _frame_scatterers(scene: Scene, traj: Trajectory, velocities: np.ndarray, t: int):
    pos = np.concatenate([scene.positions, traj.positions[t]], axis=0)
    amp = np.concatenate([scene.amplitudes, traj.amplitudes])
    vel = np.concatenate([np.zeros(len(scene.amplitudes)), velocities[t]])
    return pos, amp, vel


def _simulate_frame(pos, amp, vel, cfg: RadarConfig, noise_std: float, seed: int, t: int) -> np.ndarray:
    n_s, n_c = cfg.n_samples, cfg.n_chirps
    rng_m = np.linalg.norm(pos, axis=1)
    phi = np.arctan2(pos[:, 1], pos[:, 0])
    psi = np.arcsin(np.divide(pos[:, 2], rng_m, out=np.zeros_like(rng_m), where=rng_m > 0))

    n = np.arange(n_s)
    ci = np.arange(n_c)
    # f_b * T_s = (2 * slope * R / c) * T_s with slope = B / (n_s * T_s)
    beat = cfg.range_bin(rng_m) / n_s
    fd_tc = 2.0 * vel * cfg.carrier_hz / C_LIGHT * cfg.chirp_interval_s
    fast = np.exp(2j * np.pi * beat[:, None] * n[None, :])
    slow = np.exp(2j * np.pi * fd_tc[:, None] * ci[None, :])
    s = cfg.element_spacing
    steer = np.concatenate(
        [
            np.exp(1j * np.pi * s * np.arange(cfg.n_azimuth)[None, :] * np.sin(phi)[:, None]),
            np.exp(1j * np.pi * s * np.arange(cfg.n_elevation)[None, :] * np.sin(psi)[:, None]),
        ],
        axis=1,
    )
    chirps = np.einsum("k,kn,kc,ka->nca", amp, fast, slow, steer)
    rd = np.fft.fft(chirps, axis=0)
    rd = np.fft.fftshift(np.fft.fft(rd, axis=1), axes=1)
    rd /= n_s * n_c  # unit-amplitude on-bin scatterer -> unit peak
    if noise_std > 0:
        gen = np.random.default_rng([seed, t])
        noise = gen.standard_normal((n_s, n_c, cfg.n_antennas, 2)) * (noise_std / math.sqrt(2.0))
        rd = rd + noise[..., 0] + 1j * noise[..., 1]
    return rd


def simulate(scene: Scene, traj: Trajectory, cfg: RadarConfig, seed: int = 0, threads: int = 1) -> ComplexCube:
    """Render a ground-truth cube of dims ``(T, n_samples, n_chirps, A)``.

    Raises ``ValueError`` if any scatterer lies outside the unambiguous
    range or velocity span instead of aliasing it.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    velocities = traj.radial_velocities()
    frames = []
    for t in range(traj.n_frames):
        pos, amp, vel = _frame_scatterers(scene, traj, velocities, t)
        rng_m = np.linalg.norm(pos, axis=1)
        if np.any(rng_m <= 0) or np.any(rng_m >= cfg.max_range):
            bad = rng_m[(rng_m <= 0) | (rng_m >= cfg.max_range)][0]
            raise ValueError(
                f"frame {t}: scatterer at {bad:.3f} m outside unambiguous range (0, {cfg.max_range:.3f}) m"
            )
        lo, hi = cfg.velocity_span
        if np.any(vel <= lo) or np.any(vel >= hi):
            raise ValueError(f"frame {t}: radial velocity outside unambiguous ({lo:.3f}, {hi:.3f}) m/s")
        frames.append((pos, amp, vel))

    def render(t):
        return _simulate_frame(*frames[t], cfg, scene.noise_std, seed, t)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(render, range(traj.n_frames)))
    else:
        out = [render(t) for t in range(traj.n_frames)]
    return ComplexCube(np.stack(out, axis=0))


def angle_volume(cube: ComplexCube, frame: int, cfg: RadarConfig, angle_bins: int = DEFAULT_ANGLE_BINS) -> np.ndarray:
    """Joint (range, azimuth-bin, elevation-bin) magnitude volume.

    Cell value is ``max_d |AZ(r, d, ka)| * |EL(r, d, ke)|``; with no
    elevation sub-array the elevation axis has a single bin.
    """
    t_count = cube.dims[0]
    if not 0 <= frame < t_count:
        raise IndexError(f"frame {frame} out of range for {t_count} frames")
    n_az, n_el = antenna_split(cube.dims[3], cfg)
    x = cube.data[frame].astype(np.complex128)
    if n_az < 1:
        raise ValueError("point extraction needs an azimuth sub-array")
    az = np.abs(angle_spectrum(x[..., :n_az], angle_bins))
    if n_el:
        el = np.abs(angle_spectrum(x[..., n_az:], angle_bins))
    else:
        el = np.ones(x.shape[:2] + (1,))
    return (az[:, :, :, None] * el[:, :, None, :]).max(axis=1)


def bin_to_sine(k, n_bins: int, spacing: float = 1.0):
    return (2.0 * np.asarray(k, dtype=np.float64) / n_bins - 1.0) / spacing


def extract_pointcloud(
    cube: ComplexCube,
    frame: int,
    threshold_db: float = -10.0,
    cfg: RadarConfig | None = None,
    angle_bins: int = DEFAULT_ANGLE_BINS,
) -> PointCloud:
    """Local maxima of the angle volume within ``threshold_db`` of the frame max."""
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative")
    cfg = cfg or RadarConfig()
    vol = angle_volume(cube, frame, cfg, angle_bins)
    peak = vol.max()
    if peak <= 0:
        return PointCloud()
    keep = (vol >= peak * 10.0 ** (threshold_db / 20.0)) & (vol == maximum_filter(vol, size=3, mode="nearest"))
    r_idx, ka, ke = np.nonzero(keep)
    rng_m = r_idx * cfg.range_resolution
    sin_phi = np.clip(bin_to_sine(ka, angle_bins, cfg.element_spacing), -1.0, 1.0)
    if vol.shape[2] == 1:
        sin_psi = np.zeros_like(sin_phi)
    else:
        sin_psi = np.clip(bin_to_sine(ke, angle_bins, cfg.element_spacing), -1.0, 1.0)
    phi, psi = np.arcsin(sin_phi), np.arcsin(sin_psi)
    pts = np.stack(
        [rng_m * np.cos(psi) * np.cos(phi), rng_m * np.cos(psi) * np.sin(phi), rng_m * np.sin(psi)], axis=1
    )
    return PointCloud(pts)


def cartesian(rng_m: float, phi: float = 0.0, psi: float = 0.0) -> np.ndarray:
    return rng_m * np.array([math.cos(psi) * math.cos(phi), math.cos(psi) * math.sin(phi), math.sin(psi)])


# --- JSON (schema version 1) -------------------------------------------------


def _check_version(doc: dict, what: str):
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"{what}: unsupported schema version {doc.get('version')!r}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "extent": list(scene.extent),
        "noise_std": scene.noise_std,
        "reflectors": [
            {"position": p.tolist(), "amplitude": float(a)} for p, a in zip(scene.positions, scene.amplitudes)
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    _check_version(doc, "scene")
    refl = doc.get("reflectors", [])
    return Scene(
        positions=np.array([r["position"] for r in refl], dtype=np.float64).reshape(-1, 3),
        amplitudes=np.array([r["amplitude"] for r in refl], dtype=np.float64),
        extent=tuple(doc.get("extent", Scene.extent)),
        noise_std=float(doc.get("noise_std", 0.0)),
    )


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "n_frames": traj.n_frames,
        "frame_interval": traj.frame_interval,
        "tracks": [
            {"amplitude": float(traj.amplitudes[k]), "positions": traj.positions[:, k].tolist()}
            for k in range(traj.n_tracks)
        ],
    }


def trajectory_from_dict(doc: dict) -> Trajectory:
    _check_version(doc, "trajectory")
    tracks = doc.get("tracks", [])
    dt = float(doc.get("frame_interval", 0.1))
    if not tracks:
        return Trajectory.empty(int(doc["n_frames"]), dt)
    lengths = {len(tr["positions"]) for tr in tracks}
    if len(lengths) != 1:
        raise ValueError("all tracks must have the same number of frames")
    pos = np.stack([np.asarray(tr["positions"], dtype=np.float64) for tr in tracks], axis=1)
    return Trajectory(pos, np.array([tr["amplitude"] for tr in tracks], dtype=np.float64), dt)


def config_to_dict(cfg: RadarConfig) -> dict:
    return {"version": SCHEMA_VERSION, **asdict(cfg)}


def config_from_dict(doc: dict) -> RadarConfig:
    _check_version(doc, "radar config")
    fields = {k: v for k, v in doc.items() if k != "version"}
    return RadarConfig(**fields)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_json(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
