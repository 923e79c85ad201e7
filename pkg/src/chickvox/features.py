"""Per-call signal tracks and the 20 acoustic descriptors computed from them."""

from __future__ import annotations

import dataclasses
import logging
import math

import numpy as np
from scipy import signal

from .audio_io import AudioClip
from .detection import CallSegment, StftConfig, frame_signal
from .pitch import F0Track, FeatureError, PyinConfig, estimate_f0

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "duration_s",
    "attack_time_s",
    "envelope_slope",
    "rms_mean",
    "rms_std",
    "f0_mean_hz",
    "f0_std_hz",
    "f0_skewness",
    "f0_kurtosis",
    "f0_bandwidth_hz",
    "f0_diff1_mean_hz",
    "f0_slope_hz_per_s",
    "f0_mag_mean",
    "f1_mag_mean",
    "f2_mag_mean",
    "ratio_f0_f1",
    "ratio_f0_f2",
    "spec_centroid_mean_hz",
    "spec_centroid_std_hz",
    "attack_magnitude",
)

# descriptors proportional to waveform amplitude
AMPLITUDE_FEATURES = ("rms_mean", "rms_std", "attack_magnitude", "envelope_slope",
                      "f0_mag_mean", "f1_mag_mean", "f2_mag_mean")


@dataclasses.dataclass(frozen=True)
class FeatureConfig:
    frame: StftConfig = dataclasses.field(default_factory=lambda: StftConfig(1024, 256))
    pyin: PyinConfig = dataclasses.field(default_factory=PyinConfig)
    f0_band: tuple[float, float] = (2000.0, 6300.0)
    centroid_band: tuple[float, float] = (2000.0, 12600.0)
    # frames whose in-band magnitude is below this fraction of the full spectrum are skipped
    centroid_min_band_fraction: float = 1e-4
    harmonic_search_bins: int = 1


@dataclasses.dataclass(frozen=True)
class HarmonicTrack:
    f1_hz: np.ndarray
    f2_hz: np.ndarray
    mag_f0: np.ndarray
    mag_f1: np.ndarray
    mag_f2: np.ndarray


@dataclasses.dataclass(frozen=True)
class EnvelopeTrack:
    env: np.ndarray
    sample_rate: int

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.env))

    @property
    def t_onset(self) -> float:
        return 0.0

    @property
    def t_peak(self) -> float:
        return self.peak_index / self.sample_rate


@dataclasses.dataclass(frozen=True)
class CallTracks:
    f0: F0Track | None
    harmonics: HarmonicTrack | None
    rms: np.ndarray
    centroid: np.ndarray
    envelope: EnvelopeTrack


@dataclasses.dataclass(frozen=True)
class CallFeatureVector:
    """One value per descriptor; ``None`` marks a descriptor that could not be computed."""

    duration_s: float
    attack_time_s: float | None = None
    envelope_slope: float | None = None
    rms_mean: float | None = None
    rms_std: float | None = None
    f0_mean_hz: float | None = None
    f0_std_hz: float | None = None
    f0_skewness: float | None = None
    f0_kurtosis: float | None = None
    f0_bandwidth_hz: float | None = None
    f0_diff1_mean_hz: float | None = None
    f0_slope_hz_per_s: float | None = None
    f0_mag_mean: float | None = None
    f1_mag_mean: float | None = None
    f2_mag_mean: float | None = None
    ratio_f0_f1: float | None = None
    ratio_f0_f2: float | None = None
    spec_centroid_mean_hz: float | None = None
    spec_centroid_std_hz: float | None = None
    attack_magnitude: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in FEATURE_NAMES}

    def as_array(self) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.as_dict().values()])

    @property
    def missing(self) -> list[str]:
        return [k for k, v in self.as_dict().items() if v is None]

    @property
    def complete(self) -> bool:
        return not self.missing


def _segment_frames(x: np.ndarray, frame: StftConfig) -> np.ndarray:
    # segments shorter than a frame become a single zero-padded frame
    if x.size < frame.window_len:
        return np.pad(x, (0, frame.window_len - x.size))[None, :]
    return frame_signal(x, frame.window_len, frame.hop_len, center=False)


def rms_track(segment: AudioClip, frame: StftConfig = StftConfig(1024, 256)) -> np.ndarray:
    x = segment.samples
    if x.size < frame.window_len:
        return np.array([math.sqrt(float(np.mean(x ** 2)))])
    frames = frame_signal(x, frame.window_len, frame.hop_len, center=False)
    return np.sqrt(np.mean(frames ** 2, axis=1))


def spectral_centroid_track(segment: AudioClip, frame: StftConfig = StftConfig(1024, 256),
                            band: tuple[float, float] = (2000.0, 12600.0),
                            min_band_fraction: float = 1e-4) -> np.ndarray:
    """Magnitude-weighted mean frequency of the in-band bins, one value per retained frame.

    Frames with (near) zero in-band magnitude are dropped, so the result may be empty.
    """
    frames = _segment_frames(segment.samples, frame)
    mag = np.abs(np.fft.rfft(frames * frame.window(), axis=1))
    freqs = np.fft.rfftfreq(frame.window_len, 1.0 / segment.sample_rate)
    inband = (freqs >= band[0]) & (freqs <= band[1])
    band_mag = mag[:, inband]
    total = band_mag.sum(axis=1)
    keep = (total > 0) & (total > min_band_fraction * mag.sum(axis=1))
    return (band_mag[keep] @ freqs[inband]) / total[keep]


def envelope(segment: AudioClip) -> EnvelopeTrack:
    """Magnitude of the analytic signal."""
    return EnvelopeTrack(np.abs(signal.hilbert(segment.samples)), segment.sample_rate)


def harmonic_magnitudes(segment: AudioClip, f0: F0Track, config: PyinConfig = PyinConfig(),
                        search_bins: int = 1) -> HarmonicTrack:
    """|X| / sample_rate at the bins nearest F0, 2*F0 and 3*F0 on every voiced frame.

    Uses the pitch tracker's framing with a Hann window. Each reading is the
    largest magnitude within ``search_bins`` of the nearest bin, which absorbs
    small F0 errors multiplied up at the harmonics. A harmonic above Nyquist
    reads as NaN.
    """
    if not f0.voiced.any():
        raise FeatureError("unvoiced", "no voiced frames")
    sr = segment.sample_rate
    n = config.frame_len
    frames = frame_signal(segment.samples, n, config.hop_len, center=False)[f0.voiced]
    spec = np.abs(np.fft.rfft(frames * signal.get_window("hann", n), axis=1)) / sr
    f0_hz = f0.f0_hz
    rows = np.arange(frames.shape[0])

    def read(freq):
        k = np.round(freq * n / sr).astype(int)
        ok = k < spec.shape[1]
        out = np.full(freq.size, np.nan)
        best = np.zeros(int(ok.sum()))
        for off in range(-search_bins, search_bins + 1):
            kk = np.clip(k[ok] + off, 0, spec.shape[1] - 1)
            best = np.maximum(best, spec[rows[ok], kk])
        out[ok] = best
        return out

    return HarmonicTrack(2 * f0_hz, 3 * f0_hz, read(f0_hz), read(2 * f0_hz), read(3 * f0_hz))


def compute_tracks(segment: AudioClip, config: FeatureConfig = FeatureConfig()) -> CallTracks:
    """All signal tracks of one call; F0 and harmonics are ``None`` when they cannot be tracked."""
    try:
        f0 = estimate_f0(segment, *config.f0_band, config.pyin)
    except FeatureError as exc:
        log.debug("%s: no F0 track (%s)", segment.source_id, exc.reason)
        f0 = None
    harmonics = None
    if f0 is not None and f0.voiced.any():
        harmonics = harmonic_magnitudes(segment, f0, config.pyin, config.harmonic_search_bins)
    return CallTracks(
        f0=f0,
        harmonics=harmonics,
        rms=rms_track(segment, config.frame),
        centroid=spectral_centroid_track(segment, config.frame, config.centroid_band,
                                         config.centroid_min_band_fraction),
        envelope=envelope(segment),
    )


def _finite(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def _mean(x: np.ndarray) -> float | None:
    x = x[np.isfinite(x)]
    return float(np.mean(x)) if x.size else None


def _std(x: np.ndarray) -> float | None:
    return float(np.std(x, ddof=1)) if x.size >= 2 else None


def _ratio(num: float | None, den: float | None) -> float | None:
    if num is None or den is None or den == 0:
        return None
    return num / den


def compute_call_features(duration_s: float, tracks: CallTracks) -> CallFeatureVector:
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    env = tracks.envelope
    attack_time = env.t_peak - env.t_onset
    attack_mag = float(env.env[env.peak_index] - env.env[0])
    out = dict(
        duration_s=float(duration_s),
        attack_time_s=attack_time,
        envelope_slope=attack_mag / attack_time if attack_time > 0 else None,
        attack_magnitude=attack_mag,
        rms_mean=_mean(tracks.rms),
        rms_std=_std(tracks.rms),
        spec_centroid_mean_hz=_mean(tracks.centroid),
        spec_centroid_std_hz=_std(tracks.centroid),
    )

    f0 = tracks.f0
    if f0 is not None and f0.voiced.sum() >= 2:
        v = f0.f0_hz
        dev = v - v.mean()
        m2 = np.mean(dev ** 2)
        out.update(
            f0_mean_hz=float(v.mean()),
            f0_std_hz=float(np.std(v, ddof=1)),
            f0_bandwidth_hz=float(v.max() - v.min()),
            f0_diff1_mean_hz=float(np.mean(np.diff(v))),
        )
        if m2 > 0:
            out["f0_skewness"] = _finite(np.mean(dev ** 3) / m2 ** 1.5)
            out["f0_kurtosis"] = _finite(np.mean(dev ** 4) / m2 ** 2 - 3.0)
        if attack_time > 0:
            at_peak = v[int(np.argmin(np.abs(f0.voiced_times_s - env.t_peak)))]
            out["f0_slope_hz_per_s"] = float((at_peak - v[0]) / attack_time)

    h = tracks.harmonics
    if h is not None:
        m0, m1, m2_ = _mean(h.mag_f0), _mean(h.mag_f1), _mean(h.mag_f2)
        out.update(f0_mag_mean=m0, f1_mag_mean=m1, f2_mag_mean=m2_,
                   ratio_f0_f1=_ratio(m0, m1), ratio_f0_f2=_ratio(m0, m2_))
    return CallFeatureVector(**out)


def extract_call_features(clip: AudioClip, segment: CallSegment,
                          config: FeatureConfig = FeatureConfig()) -> CallFeatureVector:
    """Descriptors of one detected call cut from a preprocessed recording."""
    call = clip.slice_s(segment.onset_s, segment.offset_s)
    tracks = compute_tracks(call, config)
    return compute_call_features(segment.offset_s - segment.onset_s, tracks)
