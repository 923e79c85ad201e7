"""Synthetic recordings and feature sets with known ground truth."""

from __future__ import annotations

import dataclasses

import numpy as np

from .audio_io import AudioClip
from .detection import CallSegment


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum."""
    white = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(white.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(white / np.sqrt(f), n)
    return x / np.sqrt(np.mean(x ** 2))


def chirp(duration_s: float, f_start: float, f_end: float, sample_rate: int,
          amplitude: float = 1.0, ramp_s: float = 0.005) -> np.ndarray:
    """Linear chirp with raised-cosine on/off ramps."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    phase = 2 * np.pi * (f_start * t + 0.5 * (f_end - f_start) / duration_s * t ** 2)
    y = amplitude * np.sin(phase)
    r = min(int(round(ramp_s * sample_rate)), n // 2)
    if r > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        y[:r] *= ramp
        y[n - r:] *= ramp[::-1]
    return y


@dataclasses.dataclass
class SyntheticRecording:
    clip: AudioClip
    calls: list[CallSegment]


def chirp_recording(n_calls: int = 50, duration_s: float = 60.0, sample_rate: int = 44100,
                    snr_db: float = 20.0, f_range=(3000.0, 4000.0), dur_range=(0.08, 0.3),
                    min_gap_s: float = 0.25, seed: int = 0,
                    source_id: str = "synthetic") -> SyntheticRecording:
    """Band-limited chirps at random, non-overlapping times over pink noise.

    ``snr_db`` compares each chirp's RMS (over its own span) to the noise RMS.
    """
    rng = np.random.default_rng(seed)
    durs = rng.uniform(*dur_range, size=n_calls)
    slack = duration_s - 2 * min_gap_s - durs.sum() - (n_calls - 1) * min_gap_s
    if slack <= 0:
        raise ValueError("calls do not fit in the recording")
    # random partition of the slack into n_calls + 1 gaps
    cuts = np.sort(rng.uniform(0, slack, size=n_calls))
    extra = np.diff(np.concatenate(([0.0], cuts)))
    noise_rms = 1.0
    x = noise_rms * pink_noise(int(round(duration_s * sample_rate)), rng)
    amp = noise_rms * 10 ** (snr_db / 20) * np.sqrt(2)
    calls = []
    t = min_gap_s
    for d, e in zip(durs, extra):
        t += e
        f0, f1 = rng.uniform(*f_range, size=2)
        y = chirp(d, f0, f1, sample_rate, amplitude=1.0)
        # ramps lower the RMS slightly; rescale to hit the target exactly
        y *= amp / np.sqrt(2) / np.sqrt(np.mean(y ** 2))
        i0 = int(round(t * sample_rate))
        x[i0:i0 + y.size] += y
        calls.append(CallSegment(i0 / sample_rate, (i0 + y.size) / sample_rate, source_id))
        t += d + min_gap_s
    x /= np.max(np.abs(x))
    return SyntheticRecording(AudioClip(x, sample_rate, source_id), calls)


def gaussian_blobs(n_per_blob: int, centers: np.ndarray, sigma: float = 1.0,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs; returns (points, true labels)."""
    rng = np.random.default_rng(seed)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    X = np.concatenate([c + sigma * rng.standard_normal((n_per_blob, centers.shape[1]))
                        for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_blob)
    return X, y


def simplex_centers(k: int, dim: int, separation: float) -> np.ndarray:
    """``k`` points in ``dim`` dimensions, every pair exactly ``separation`` apart."""
    if k > dim:
        raise ValueError("need dim >= k")
    eye = np.eye(k)
    c = eye - eye.mean(axis=0)
    c *= separation / np.sqrt(2)
    out = np.zeros((k, dim))
    out[:, :k] = c
    return out
