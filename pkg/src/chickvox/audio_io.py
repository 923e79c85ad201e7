"""Loading, peak normalisation and band-pass filtering of recordings."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile


class AudioError(Exception):
    """Raised when a recording cannot be read or has an unsupported encoding."""


class NormalizationError(AudioError):
    """Raised when peak normalisation is asked of a silent recording."""


@dataclasses.dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioError(f"expected mono samples, got shape {x.shape}")
        if x.size == 0:
            raise AudioError("empty sample buffer")
        if not np.all(np.isfinite(x)):
            raise AudioError("non-finite samples")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate, self.source_id)

    def slice_s(self, start_s: float, end_s: float) -> "AudioClip":
        """Sub-clip between two times, sample indices rounded to nearest."""
        i0 = max(0, int(round(start_s * self.sample_rate)))
        i1 = min(self.samples.size, int(round(end_s * self.sample_rate)))
        if i1 <= i0:
            raise AudioError(f"empty slice [{start_s}, {end_s}] of {self.source_id!r}")
        return self.with_samples(self.samples[i0:i1])


@dataclasses.dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 2000.0
    high_hz: float = 12600.0

    def validate(self, sample_rate: int) -> None:
        if not 0 < self.low_hz < self.high_hz < sample_rate / 2:
            raise ValueError(
                f"band [{self.low_hz}, {self.high_hz}] Hz invalid for "
                f"sample rate {sample_rate} (need 0 < low < high < {sample_rate / 2})"
            )


def load_wav(path, source_id: str | None = None) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip in [-1, 1].

    Multichannel input is downmixed by equal-weight averaging.
    """
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except (OSError, ValueError, EOFError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample encoding {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"{path}: zero-length stream")
    return AudioClip(x, sr, source_id if source_id is not None else path.stem)


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a clip as PCM16 (clipped to [-1, 1]) or float32."""
    if encoding == "pcm16":
        data = np.round(np.clip(clip.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    elif encoding == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    wavfile.write(Path(path), clip.sample_rate, data)


def normalize_max_loudness(clip: AudioClip) -> AudioClip:
    peak = float(np.max(np.abs(clip.samples)))
    if peak == 0.0:
        raise NormalizationError(f"{clip.source_id!r} is silent")
    return clip.with_samples(clip.samples / peak)


def butter_bandpass_sos(band: BandpassSpec, sample_rate: int, order: int = 4) -> np.ndarray:
    band.validate(sample_rate)
    return signal.butter(order, [band.low_hz, band.high_hz], btype="bandpass",
                         fs=sample_rate, output="sos")


def bandpass(clip: AudioClip, band: BandpassSpec, order: int = 4) -> AudioClip:
    """Zero-phase Butterworth band-pass (forward-backward, so effective order doubles)."""
    sos = butter_bandpass_sos(band, clip.sample_rate, order)
    x = clip.samples
    # sosfiltfilt needs more samples than its default edge padding
    padlen = min(3 * (2 * len(sos) + 1), x.size - 1)
    y = signal.sosfiltfilt(sos, x, padlen=max(padlen, 0))
    return clip.with_samples(y)
