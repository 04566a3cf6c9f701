"""Frame impairment: Rician block fading plus SNR-calibrated AWGN.

The fading tap set follows the configured delay/gain profile: tap 0 is
Rician with the configured K-factor, later taps are Rayleigh, and all
taps are held constant over the frame (block fading).  Fractional path
delays use a 16-tap Hann-windowed sinc interpolator.  The faded frame is
renormalized to unit mean power before noise is added, so `snr_db`
always means received-signal-to-noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DelayTooLarge, ZeroPower
from .synth import ComplexFrame

__all__ = ["ChannelConfig", "apply_rician", "apply_awgn", "impair",
           "fractional_delay"]

DEFAULT_PATH_DELAYS = (0.0, 1.8, 3.4)
DEFAULT_PATH_GAINS_DB = (0.0, -2.0, -10.0)
DEFAULT_K_FACTOR = 4.0

_SINC_TAPS = 16


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    path_delays: tuple[float, ...] = DEFAULT_PATH_DELAYS
    path_gains_db: tuple[float, ...] = DEFAULT_PATH_GAINS_DB
    k_factor: float = DEFAULT_K_FACTOR
    fading_seed: int = 0

    def __post_init__(self):
        delays = tuple(float(d) for d in self.path_delays)
        gains = tuple(float(g) for g in self.path_gains_db)
        object.__setattr__(self, "path_delays", delays)
        object.__setattr__(self, "path_gains_db", gains)
        if len(delays) != len(gains):
            raise ValueError("path_delays and path_gains_db length mismatch")
        if not delays or delays[0] != 0.0:
            raise ValueError("path_delays must start at 0")
        if any(b < a for a, b in zip(delays, delays[1:])):
            raise ValueError("path_delays must be sorted ascending")
        if self.k_factor < 0:
            raise ValueError("k_factor must be >= 0")


def fractional_delay(x: np.ndarray, delay: float) -> np.ndarray:
    """Delay a sequence by a (possibly fractional) number of samples.

    Integer delays are exact shifts with zero fill.  Fractional delays
    use a 16-tap Hann-windowed sinc; edge samples are zero-padded.
    """
    if delay < 0:
        raise ValueError("delay must be >= 0")
    n = len(x)
    n0 = int(math.floor(delay))
    mu = delay - n0
    out = np.zeros(n, dtype=np.complex128)
    if mu < 1e-12:
        if n0 < n:
            out[n0:] = x[: n - n0]
        return out
    k = np.arange(_SINC_TAPS)
    center = _SINC_TAPS // 2 - 1
    window = np.hanning(_SINC_TAPS + 2)[1:-1]
    taps = np.sinc(k - center - mu) * window
    taps = taps / taps.sum()
    full = np.convolve(x, taps)  # full[m] ~ x(m - center - mu)
    # out[i] = x(i - n0 - mu) = full[i - n0 + center]
    shift = n0 - center
    start_out = max(0, shift)
    start_full = max(0, -shift)
    length = min(n - start_out, len(full) - start_full)
    if length > 0:
        out[start_out:start_out + length] = full[start_full:start_full + length]
    return out


def _draw_taps(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    k = cfg.k_factor
    taps = np.empty(len(cfg.path_delays), dtype=np.complex128)
    for p in range(len(taps)):
        if p == 0:
            theta = rng.uniform(0.0, 2 * np.pi)
            if math.isinf(k):
                taps[p] = np.exp(1j * theta)
            else:
                scatter = (rng.normal() + 1j * rng.normal()) * np.sqrt(
                    1.0 / (2.0 * (k + 1.0)))
                taps[p] = np.sqrt(k / (k + 1.0)) * np.exp(1j * theta) + scatter
        else:
            taps[p] = (rng.normal() + 1j * rng.normal()) / np.sqrt(2.0)
    return taps


def apply_rician(frame: ComplexFrame, cfg: ChannelConfig,
                 rng: np.random.Generator) -> ComplexFrame:
    """Apply block Rician multipath fading; output is unit mean power."""
    n = frame.spec.frame_len
    for d in cfg.path_delays:
        if d >= n:
            raise DelayTooLarge(f"path delay {d} >= frame length {n}")
    taps = _draw_taps(cfg, rng)
    gains = 10.0 ** (np.asarray(cfg.path_gains_db) / 20.0)
    y = np.zeros(n, dtype=np.complex128)
    for g, h, d in zip(gains, taps, cfg.path_delays):
        y += g * h * fractional_delay(frame.samples, d)
    p = np.mean(np.abs(y) ** 2)
    if p <= 0:
        raise ZeroPower("faded frame has zero power")
    y /= np.sqrt(p)
    return frame.with_samples(y)


def apply_awgn(frame: ComplexFrame, snr_db: float,
               rng: np.random.Generator) -> ComplexFrame:
    """Add circular complex Gaussian noise calibrated to the frame power."""
    if math.isinf(snr_db) and snr_db > 0:
        return frame.with_samples(frame.samples.copy(), snr_db=snr_db)
    p = frame.power
    if p <= 0:
        raise ZeroPower("cannot calibrate noise against a zero-power frame")
    sigma2 = p / 10.0 ** (snr_db / 10.0)
    n = frame.spec.frame_len
    noise = (rng.normal(size=n) + 1j * rng.normal(size=n)) * np.sqrt(sigma2 / 2)
    return frame.with_samples(frame.samples + noise, snr_db=snr_db)


def impair(frame: ComplexFrame, cfg: ChannelConfig,
           rng: np.random.Generator) -> ComplexFrame:
    """Fade then add noise, both drawn from the supplied generator."""
    faded = apply_rician(frame, cfg, rng)
    return apply_awgn(faded, cfg.snr_db, rng)
