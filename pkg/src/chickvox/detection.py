"""Call onset detection from High Frequency Content and offset detection from frame energy.

Frame ``i`` of a centred analysis (``center=True``) is centred on sample
``i * hop_len``; its time stamp is ``i * hop_len / sample_rate``.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Literal

import numpy as np
from scipy import ndimage, signal

from .audio_io import AudioClip

log = logging.getLogger(__name__)

OffsetMethod = Literal["local_min", "first_diff", "second_diff"]
OFFSET_METHODS = ("local_min", "first_diff", "second_diff")


class DetectionError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class StftConfig:
    window_len: int = 2048
    hop_len: int = 512
    window_fn: str = "hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len & (self.window_len - 1):
            raise ValueError(f"window_len must be a power of two, got {self.window_len}")
        if not 0 < self.hop_len <= self.window_len:
            raise ValueError(f"need 0 < hop_len <= window_len, got {self.hop_len}")

    def window(self) -> np.ndarray:
        return signal.get_window(self.window_fn, self.window_len, fftbins=True)


@dataclasses.dataclass(frozen=True)
class DetectionParams:
    stft: StftConfig = dataclasses.field(default_factory=StftConfig)
    peak_threshold_k: float = 1.5
    median_window_s: float = 0.35
    # absolute floor for peaks, as a fraction of the curve maximum
    peak_delta: float = 0.1
    min_inter_onset_s: float = 0.03
    max_call_dur_s: float = 0.5
    offset_method: OffsetMethod = "first_diff"
    # log compression applied to the normalised HFC before differencing
    hfc_log_gain: float = 1000.0

    def __post_init__(self):
        if self.max_call_dur_s <= 0:
            raise ValueError("max_call_dur_s must be positive")
        if self.min_inter_onset_s < 0:
            raise ValueError("min_inter_onset_s must be non-negative")
        if self.offset_method not in OFFSET_METHODS:
            raise ValueError(f"offset_method must be one of {OFFSET_METHODS}")


@dataclasses.dataclass(frozen=True)
class CallSegment:
    onset_s: float
    offset_s: float
    source_id: str = ""

    def __post_init__(self):
        if not self.offset_s > self.onset_s:
            raise ValueError(f"offset {self.offset_s} must follow onset {self.onset_s}")

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


def frame_signal(x: np.ndarray, frame_len: int, hop_len: int, center: bool = True) -> np.ndarray:
    """Strided (n_frames, frame_len) view; centred frames are zero padded at both ends."""
    x = np.asarray(x, dtype=np.float64)
    if center:
        x = np.pad(x, frame_len // 2)
    if x.size < frame_len:
        raise ValueError(f"signal of {x.size} samples shorter than frame {frame_len}")
    n_frames = 1 + (x.size - frame_len) // hop_len
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop_len][:n_frames]


def frame_times(n_frames: int, hop_len: int, sample_rate: int) -> np.ndarray:
    return np.arange(n_frames) * hop_len / sample_rate


def power_spectrogram(x: np.ndarray, stft: StftConfig, center: bool = True,
                      chunk: int = 4096) -> np.ndarray:
    """|X(k, t)|^2 as an (n_frames, n_bins) array, computed in frame chunks."""
    frames = frame_signal(x, stft.window_len, stft.hop_len, center)
    win = stft.window()
    out = np.empty((frames.shape[0], stft.window_len // 2 + 1))
    for i in range(0, frames.shape[0], chunk):
        spec = np.fft.rfft(frames[i:i + chunk] * win, axis=1)
        out[i:i + chunk] = spec.real ** 2 + spec.imag ** 2
    return out


def hfc_curve(clip: AudioClip, stft: StftConfig = StftConfig()) -> np.ndarray:
    """HFC[t] = sum_k k * |X(k, t)|^2 over centred frames."""
    if clip.samples.size < stft.window_len:
        raise DetectionError(
            f"clip of {clip.samples.size} samples shorter than window {stft.window_len}")
    power = power_spectrogram(clip.samples, stft)
    k = np.arange(power.shape[1], dtype=np.float64)
    return power @ k


def hfc_novelty(curve: np.ndarray, log_gain: float = 1000.0) -> np.ndarray:
    """Half-wave rectified first difference of the log-compressed, max-normalised HFC.

    Output has the length of ``curve``; entry ``t`` is the rise into frame ``t``.
    Invariant to positive scaling of ``curve``.
    """
    curve = np.asarray(curve, dtype=np.float64)
    peak = curve.max() if curve.size else 0.0
    if peak <= 0:
        return np.zeros_like(curve)
    compressed = np.log1p(log_gain * curve / peak)
    rise = np.diff(compressed, prepend=compressed[:1])
    return np.maximum(rise, 0.0)


def pick_onsets(curve: np.ndarray, params: DetectionParams = DetectionParams(),
                sample_rate: int = 44100) -> list[float]:
    """Peaks over ``k * moving median`` (and ``delta * max``), at least ``min_inter_onset_s`` apart.

    When two peaks are closer than the minimum spacing the larger one survives.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty detection curve")
    hop = params.stft.hop_len
    frame_dt = hop / sample_rate
    med_len = max(1, int(round(params.median_window_s / frame_dt)) | 1)
    baseline = ndimage.median_filter(curve, size=med_len, mode="mirror")
    threshold = params.peak_threshold_k * baseline
    if curve.max() > 0:
        threshold = np.maximum(threshold, params.peak_delta * curve.max())
    distance = int(np.ceil(params.min_inter_onset_s / frame_dt - 1e-9))
    peaks, _ = signal.find_peaks(curve)
    # find_peaks ignores the end points; an edge maximum still counts as a peak
    if curve.size > 1:
        edges = [i for i, j in ((0, 1), (curve.size - 1, curve.size - 2)) if curve[i] > curve[j]]
    else:
        edges = [0] if curve[0] > 0 else []
    peaks = np.union1d(peaks, edges).astype(int)
    peaks = peaks[curve[peaks] > threshold[peaks]]
    peaks = _enforce_spacing(peaks, curve, distance)
    return [float(t) for t in peaks * frame_dt]


def _enforce_spacing(peaks: np.ndarray, curve: np.ndarray, distance: int) -> np.ndarray:
    if distance < 1 or peaks.size < 2:
        return peaks
    kept: list[int] = []
    # strongest first, earliest on ties
    for p in sorted(peaks, key=lambda p: (-curve[p], p)):
        if all(abs(p - q) >= distance for q in kept):
            kept.append(p)
    return np.sort(np.asarray(kept, dtype=int))


def energy_curve(clip: AudioClip, stft: StftConfig = StftConfig()) -> np.ndarray:
    """Short-time RMS, weighted by the analysis window, on the grid of :func:`hfc_curve`."""
    frames = frame_signal(clip.samples, stft.window_len, stft.hop_len, center=True)
    w = stft.window()
    return np.sqrt(frames ** 2 @ w / w.sum())


def _first_minimum_below(values: np.ndarray, level: float) -> int:
    """Index of the earliest local minimum not above ``level``; plateaus count from their
    first sample. Falls back to the global minimum (earliest on ties)."""
    if values.size == 1:
        return 0
    left = np.concatenate(([np.inf], values[:-1]))
    right = np.concatenate((values[1:], [np.inf]))
    cand = np.flatnonzero((values < left) & (values <= right) & (values <= level))
    if cand.size:
        return int(cand[0])
    return int(np.argmin(values))


def _drop_minimum(d: np.ndarray) -> int:
    # difference curves: minimum at least half way from the median down to the deepest value
    med = np.median(d)
    return _first_minimum_below(d, med - 0.5 * (med - d.min()))


def _floor_minimum(e: np.ndarray) -> int:
    # energy: minimum within the lowest quarter of the window's range
    return _first_minimum_below(e, e.min() + 0.25 * (e.max() - e.min()))


def detect_offset(clip: AudioClip, onset_s: float, params: DetectionParams = DetectionParams(),
                  limit_s: float | None = None, energy: np.ndarray | None = None) -> float:
    """Offset time after ``onset_s`` from the frame energy, per ``params.offset_method``.

    The search window is ``[onset_s, onset_s + max_call_dur_s]``, clipped to the
    clip end and to ``limit_s`` when given. ``energy`` may carry a precomputed
    :func:`energy_curve` of the whole clip.

    The difference methods work on mean-square energy. Under the window
    weighting it falls in a symmetric S-curve centred on the event end, so the
    steepest drop sits on the end and the sharpest downward bend a quarter
    window before it; the RMS floor is reached half a window after it.
    """
    sr = clip.sample_rate
    stft = params.stft
    if not 0 <= onset_s < clip.duration_s:
        raise DetectionError(f"onset {onset_s} outside clip of {clip.duration_s} s")
    end_s = min(onset_s + params.max_call_dur_s, clip.duration_s)
    if limit_s is not None:
        end_s = min(end_s, limit_s)
    if energy is None:
        energy = energy_curve(clip, stft)
    dt = stft.hop_len / sr
    half_win = stft.window_len / 2 / sr
    i0 = int(np.ceil(onset_s / dt - 1e-9))
    i1 = min(int(np.floor(end_s / dt + 1e-9)), energy.size - 1)
    method = params.offset_method
    order = {"local_min": 0, "first_diff": 1, "second_diff": 2}[method]
    if i1 - i0 < order + 1:
        raise DetectionError(f"offset window after {onset_s:.3f} s too short")

    # a call cannot end before its energy maximum
    i0 = min(i0 + int(np.argmax(energy[i0:i1 + 1])), i1 - order - 1)
    e = energy[i0:i1 + 1]
    if method == "local_min":
        j = _floor_minimum(e[1:]) + 1
        t = (i0 + j) * dt - half_win
    elif method == "first_diff":
        # d[j] is the change from frame i0+j to i0+j+1
        j = _drop_minimum(np.diff(e ** 2))
        t = (i0 + j + 0.5) * dt
    else:
        # d2[j] is centred on frame i0+j+1
        j = _drop_minimum(np.diff(e ** 2, n=2))
        t = (i0 + j + 1) * dt + half_win / 2

    t = min(t, end_s)
    if t <= onset_s:
        # compensation can land before the onset for very short events
        t = min(onset_s + dt, end_s)
    if t <= onset_s:
        raise DetectionError(f"no offset found after {onset_s:.3f} s")
    return float(t)


def detect_onsets(clip: AudioClip, params: DetectionParams = DetectionParams()) -> list[float]:
    curve = hfc_curve(clip, params.stft)
    novelty = hfc_novelty(curve, params.hfc_log_gain)
    # frames overlapping the leading zero pad rise into any background noise
    novelty[:params.stft.window_len // 2 // params.stft.hop_len + 1] = 0.0
    return pick_onsets(novelty, params, clip.sample_rate)


def segment_calls(clip: AudioClip, params: DetectionParams = DetectionParams()) -> list[CallSegment]:
    """Onsets from HFC novelty, each closed by :func:`detect_offset`.

    A call whose offset search fails is dropped with a warning. The offset
    search of a call never extends past the next onset, so segments never overlap.
    """
    onsets = detect_onsets(clip, params)
    energy = energy_curve(clip, params.stft)
    segments = []
    for i, onset in enumerate(onsets):
        nxt = onsets[i + 1] if i + 1 < len(onsets) else None
        try:
            offset = detect_offset(clip, onset, params, limit_s=nxt, energy=energy)
        except DetectionError as exc:
            log.warning("%s: dropping call at %.3f s: %s", clip.source_id, onset, exc)
            continue
        segments.append(CallSegment(onset, offset, clip.source_id))
    return resolve_overlaps(segments)


def resolve_overlaps(segments: list[CallSegment]) -> list[CallSegment]:
    """Sort by onset and truncate any offset that runs past the next onset."""
    segments = sorted(segments, key=lambda s: s.onset_s)
    out = []
    for i, seg in enumerate(segments):
        if i + 1 < len(segments) and seg.offset_s > segments[i + 1].onset_s:
            nxt = segments[i + 1].onset_s
            if nxt <= seg.onset_s:
                continue
            seg = CallSegment(seg.onset_s, nxt, seg.source_id)
        out.append(seg)
    return out
