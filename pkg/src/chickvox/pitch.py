"""Probabilistic YIN fundamental-frequency tracking.

Per frame, the cumulative-mean-normalised difference function (CMND) is
thresholded at a grid of thresholds weighted by a beta prior; each trough
collects probability mass from the thresholds it falls under (earlier troughs
favoured by a Boltzmann prior). The resulting pitch-candidate probabilities
feed an HMM over (pitch bin x voiced/unvoiced) states decoded with Viterbi.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import stats

from .audio_io import AudioClip
from .detection import frame_signal


class FeatureError(Exception):
    """A descriptor track cannot be computed; ``reason`` is a short code."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


@dataclasses.dataclass(frozen=True)
class PyinConfig:
    frame_len: int = 2048
    hop_len: int = 256
    n_thresholds: int = 100
    beta_params: tuple[float, float] = (2.0, 18.0)
    boltzmann_param: float = 2.0
    cents_per_state: float = 60.0
    max_transition_rate: float = 35.92  # octaves per second
    switch_prob: float = 0.01
    no_trough_prob: float = 0.01


@dataclasses.dataclass(frozen=True)
class F0Track:
    """Frame times, per-frame F0 (NaN where unvoiced), voiced flags and voicing probabilities."""

    times_s: np.ndarray
    f0_all: np.ndarray
    voiced: np.ndarray
    voicing: np.ndarray
    fmin: float = 0.0
    fmax: float = np.inf

    @property
    def f0_hz(self) -> np.ndarray:
        return self.f0_all[self.voiced]

    @property
    def voiced_times_s(self) -> np.ndarray:
        return self.times_s[self.voiced]

    @property
    def voiced_fraction(self) -> float:
        return float(self.voiced.mean()) if self.voiced.size else 0.0


def difference_function(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """YIN difference d(tau) = sum_{j<W} (x_j - x_{j+tau})^2, W = frame_len - max_lag.

    Returns an (n_frames, max_lag + 1) array.
    """
    n = frames.shape[1]
    w = n - max_lag
    if w <= 0:
        raise ValueError("frame too short for the lag range")
    nfft = 1 << int(np.ceil(np.log2(n + w)))
    head = frames[:, :w]
    # cross-correlation r(tau) = sum_{j<W} x_j x_{j+tau}
    r = np.fft.irfft(np.conj(np.fft.rfft(head, nfft)) * np.fft.rfft(frames, nfft), nfft)[:, :max_lag + 1]
    sq = np.cumsum(np.pad(frames ** 2, ((0, 0), (1, 0))), axis=1)
    lags = np.arange(max_lag + 1)
    energy_0 = sq[:, w][:, None]
    energy_tau = sq[:, lags + w] - sq[:, lags]
    return np.maximum(energy_0 + energy_tau - 2 * r, 0.0)


def cmnd(diff: np.ndarray) -> np.ndarray:
    """Cumulative-mean-normalised difference; lag 0 maps to 1."""
    out = np.ones_like(diff)
    cums = np.cumsum(diff[:, 1:], axis=1)
    lags = np.arange(1, diff.shape[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = np.where(cums > 0, diff[:, 1:] * lags / cums, 1.0)
    return out


def _parabolic_shift(y: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Vertex offset in (-1, 1) of the parabola through y[idx-1], y[idx], y[idx+1]."""
    idx = np.clip(idx, 1, y.size - 2)
    a, b, c = y[idx - 1], y[idx], y[idx + 1]
    den = a - 2 * b + c
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(np.abs(den) > 0, 0.5 * (a - c) / den, 0.0)
    return np.clip(shift, -1.0, 1.0)


def _local_transition(n_bins: int, width: int) -> np.ndarray:
    """Triangular band transition matrix, rows normalised."""
    half = width // 2
    i = np.arange(n_bins)
    dist = np.abs(i[:, None] - i[None, :])
    t = np.where(dist <= half, half + 1 - dist, 0).astype(np.float64)
    return t / t.sum(axis=1, keepdims=True)


def viterbi(log_obs: np.ndarray, log_trans: np.ndarray, log_init: np.ndarray) -> np.ndarray:
    """Most likely state path; ``log_obs`` is (n_frames, n_states)."""
    n_frames, n_states = log_obs.shape
    score = log_init + log_obs[0]
    back = np.empty((n_frames, n_states), dtype=np.intp)
    for t in range(1, n_frames):
        cand = score[:, None] + log_trans
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(n_states)] + log_obs[t]
    path = np.empty(n_frames, dtype=np.intp)
    path[-1] = int(np.argmax(score))
    for t in range(n_frames - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def estimate_f0(clip: AudioClip, fmin: float, fmax: float, config: PyinConfig = PyinConfig()) -> F0Track:
    """Track F0 over non-centred frames of ``clip``; frame times are frame centres."""
    sr = clip.sample_rate
    if not 0 < fmin < fmax <= sr / 2:
        raise ValueError(f"invalid F0 band [{fmin}, {fmax}]")
    n = config.frame_len
    if clip.samples.size < n + config.hop_len:
        raise FeatureError("too_short", f"segment of {clip.samples.size} samples needs >= 2 frames")

    min_period = max(1, int(np.floor(sr / fmax)))
    max_period = min(int(np.ceil(sr / fmin)), n - 1)
    frames = frame_signal(clip.samples, n, config.hop_len, center=False)
    n_frames = frames.shape[0]
    times = (np.arange(n_frames) * config.hop_len + n / 2) / sr

    diff = difference_function(frames, max_period + 1)
    yin = cmnd(diff)[:, min_period:max_period + 1]

    thresholds = np.linspace(0, 1, config.n_thresholds + 1)
    beta_probs = np.diff(stats.beta.cdf(thresholds, *config.beta_params))
    bins_per_octave = 1200.0 / config.cents_per_state
    n_bins = int(np.floor(bins_per_octave * np.log2(fmax / fmin))) + 1

    obs = np.zeros((n_frames, n_bins))
    cand_f0 = np.full((n_frames, n_bins), np.nan)
    cand_p = np.zeros((n_frames, n_bins))
    for t in range(n_frames):
        y = yin[t]
        if y.size < 2:
            continue
        left = np.concatenate(([np.inf], y[:-1]))
        right = np.concatenate((y[1:], [np.inf]))
        troughs = np.flatnonzero((y < left) & (y <= right))
        if troughs.size == 0:
            continue
        heights = y[troughs]
        below = np.less.outer(heights, thresholds[1:])  # (n_troughs, n_thresholds)
        position = np.cumsum(below, axis=0) - 1
        n_below = below.sum(axis=0)
        prior = np.where(below, stats.boltzmann.pmf(position, config.boltzmann_param,
                                                    np.maximum(n_below, 1)), 0.0)
        probs = prior @ beta_probs
        gmin = int(np.argmin(heights))
        probs[gmin] += config.no_trough_prob * beta_probs[~below[gmin]].sum()

        # refine each trough on the raw difference function
        lag_idx = troughs + min_period
        period = lag_idx + _parabolic_shift(diff[t], lag_idx)
        f0 = sr / period
        b = np.clip(np.round(bins_per_octave * np.log2(f0 / fmin)), 0, n_bins - 1).astype(int)
        for bi, fi, pi in zip(b, f0, probs):
            obs[t, bi] += pi
            if pi > cand_p[t, bi]:
                cand_p[t, bi] = pi
                cand_f0[t, bi] = fi

    voiced_prob = np.clip(obs.sum(axis=1), 0.0, 1.0)
    full_obs = np.concatenate([obs, np.repeat(((1 - voiced_prob) / n_bins)[:, None], n_bins, axis=1)],
                              axis=1)

    max_steps = config.max_transition_rate * bins_per_octave * config.hop_len / sr
    width = 2 * int(np.ceil(max_steps)) + 1
    local = _local_transition(n_bins, width)
    switch = np.array([[1 - config.switch_prob, config.switch_prob],
                       [config.switch_prob, 1 - config.switch_prob]])
    trans = np.kron(switch, local)
    with np.errstate(divide="ignore"):
        path = viterbi(np.log(full_obs), np.log(trans), np.full(2 * n_bins, -np.log(2 * n_bins)))

    voiced = path < n_bins
    bins = path % n_bins
    grid = fmin * 2.0 ** (np.arange(n_bins) / bins_per_octave)
    f0_all = np.where(np.isnan(cand_f0[np.arange(n_frames), bins]),
                      grid[bins], cand_f0[np.arange(n_frames), bins])
    f0_all = np.clip(f0_all, fmin, fmax)
    f0_all[~voiced] = np.nan
    return F0Track(times, f0_all, voiced, voiced_prob, fmin, fmax)
