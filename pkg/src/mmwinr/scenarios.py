"""Fixed synthetic scenarios used as regression baselines.

The small radar layout gives cubes of dims ``(T, 32, 16, 8)``: 32 range
bins, 16 Doppler bins, 4 azimuth + 4 elevation channels.
"""

from __future__ import annotations

from .cube import ComplexCube
from .sim import RadarConfig, Scene, Trajectory, activity_program, simulate

SMALL_RADAR = RadarConfig(n_samples=32, n_chirps=16, n_azimuth=4, n_elevation=4)


def regression_item(n_frames: int = 10) -> tuple[Scene, Trajectory, ComplexCube]:
    """Two scatterers, noise-free: a static reflector plus one walking scatterer."""
    scene = Scene(positions=[[0.9, 0.2, 0.0]], amplitudes=[1.0])
    traj = activity_program("walk", {"n_scatterers": 1, "center": (1.2, -0.1, 0.05), "speed": 0.5}, n_frames, seed=1)
    return scene, traj, simulate(scene, traj, SMALL_RADAR)


# (static reflectors, amplitudes, activity, activity params) per toy item
_TOY = [
    ([[0.9, 0.3, 0.0]], [1.0], "wave", {"center": (1.1, -0.1, 0.0)}),
    ([[1.3, -0.3, 0.1]], [0.8], "walk", {"center": (1.2, 0.1, 0.0), "speed": 0.4}),
    ([[0.7, -0.2, 0.0], [1.0, 0.35, -0.1]], [0.6, 0.6], "jump", {"center": (0.9, 0.0, 0.0)}),
    ([[1.2, 0.0, 0.2]], [1.2], "still", {"center": (0.8, 0.2, 0.0)}),
]


def toy_dataset(n_frames: int = 10, n_tracks: int = 2, seed: int = 0) -> list[tuple[Scene, Trajectory, ComplexCube]]:
    """Four (scene, trajectory, cube) items, each scene paired with its own activity."""
    items = []
    for i, (pos, amp, act, params) in enumerate(_TOY):
        scene = Scene(positions=pos, amplitudes=amp)
        traj = activity_program(act, {**params, "n_scatterers": n_tracks}, n_frames, seed=seed + i)
        items.append((scene, traj, simulate(scene, traj, SMALL_RADAR)))
    return items
