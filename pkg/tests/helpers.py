"""Independent oracles shared by the tests."""

import numpy as np


def central_difference(f, x: np.ndarray, idx, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` along coordinates ``idx``."""
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps gradients that are zero up to round-off from dividing
    finite-difference noise by ~0.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def naive_dft_cube(pos, amp, vel, cfg):
    """Direct-sum RD cube of point scatterers (no FFT), one frame: (R, D, A).

    Evaluates X[k, l] = 1/(R D) sum_n sum_c s[n, c] exp(-2 pi i (k n / R + l' c / D))
    with l' the fftshifted Doppler index.
    """
    from mmwinr.sim import C_LIGHT

    r_n, d_n = cfg.n_samples, cfg.n_chirps
    out = np.zeros((r_n, d_n, cfg.n_antennas), dtype=np.complex128)
    n = np.arange(r_n)
    c = np.arange(d_n)
    k = np.arange(r_n)
    l_shift = np.arange(d_n) - d_n // 2
    for p, a, v in zip(pos, amp, vel):
        rng_m = np.linalg.norm(p)
        phi = np.arctan2(p[1], p[0])
        psi = np.arcsin(p[2] / rng_m)
        slope = cfg.bandwidth_hz / (r_n * 1.0)  # per sample, with T_s = 1
        fb = 2 * slope * rng_m / C_LIGHT
        fd_tc = 2 * v * cfg.carrier_hz / C_LIGHT * cfg.chirp_interval_s
        steer = np.concatenate(
            [
                np.exp(1j * np.pi * cfg.element_spacing * np.arange(cfg.n_azimuth) * np.sin(phi)),
                np.exp(1j * np.pi * cfg.element_spacing * np.arange(cfg.n_elevation) * np.sin(psi)),
            ]
        )
        rg = np.exp(2j * np.pi * (fb - k[:, None] / r_n) * n[None, :]).sum(axis=1)
        dp = np.exp(2j * np.pi * (fd_tc - l_shift[:, None] / d_n) * c[None, :]).sum(axis=1)
        out += a * rg[:, None, None] * dp[None, :, None] * steer[None, None, :]
    return out / (r_n * d_n)
