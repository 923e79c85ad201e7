import itertools

import numpy as np
import pytest
from scipy import signal

from chickvox.pitch import FeatureError, PyinConfig, cmnd, difference_function, estimate_f0, viterbi
from conftest import SR, clip_of, tone


def test_tone_median_error_and_voicing():
    track = estimate_f0(clip_of(tone(3000, 0.2)), 2000, 6300)
    assert abs(np.median(track.f0_hz) - 3000) <= 15
    assert track.voiced_fraction >= 0.9


def test_white_noise_mostly_unvoiced():
    x = np.random.default_rng(0).standard_normal(SR // 2)
    assert estimate_f0(clip_of(x), 2000, 6300).voiced_fraction < 0.2


def test_chirp_track_rises():
    t = np.arange(int(0.3 * SR)) / SR
    x = signal.chirp(t, 3000, t[-1], 3500)
    f = estimate_f0(clip_of(x), 2000, 6300).f0_hz
    assert f.size > 10
    # monotone up to a 0.5% wobble
    assert np.all(np.diff(f) > -0.005 * f[:-1])
    assert f[-1] - f[0] > 300


def test_silence_has_no_voiced_frames():
    assert estimate_f0(clip_of(np.zeros(SR // 5)), 2000, 6300).voiced.sum() == 0


def test_too_short_clip():
    with pytest.raises(FeatureError) as err:
        estimate_f0(clip_of(tone(3000, 0.01)), 2000, 6300)
    assert err.value.reason == "too_short"


def test_invalid_band():
    with pytest.raises(ValueError):
        estimate_f0(clip_of(tone(3000, 0.2)), 6000, 3000)


def test_output_stays_in_band():
    track = estimate_f0(clip_of(tone(2050, 0.2)), 2000, 6300)
    f = track.f0_hz
    assert f.size and np.all((f >= 2000) & (f <= 6300))


def test_frame_times_are_centres():
    cfg = PyinConfig()
    track = estimate_f0(clip_of(tone(3000, 0.2)), 2000, 6300, cfg)
    assert track.times_s[0] == pytest.approx(cfg.frame_len / 2 / SR)
    assert np.allclose(np.diff(track.times_s), cfg.hop_len / SR)


def test_difference_function_matches_direct_sum():
    rng = np.random.default_rng(1)
    frames = rng.standard_normal((3, 64))
    d = difference_function(frames, 20)
    w = 64 - 20
    for f in range(3):
        for tau in range(21):
            direct = sum((frames[f, j] - frames[f, j + tau]) ** 2 for j in range(w))
            assert d[f, tau] == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_cmnd_definition():
    d = np.array([[0.0, 2.0, 1.0, 4.0]])
    out = cmnd(d)
    assert out[0, 0] == 1.0
    assert out[0, 1:] == pytest.approx([2 * 1 / 2, 1 * 2 / 3, 4 * 3 / 7])


def test_viterbi_matches_path_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n_states, n_frames = 3, 5
        obs = np.log(rng.random((n_frames, n_states)))
        trans = rng.random((n_states, n_states))
        trans = np.log(trans / trans.sum(axis=1, keepdims=True))
        init = np.log(np.full(n_states, 1 / n_states))
        best, best_path = -np.inf, None
        for path in itertools.product(range(n_states), repeat=n_frames):
            s = init[path[0]] + obs[0, path[0]]
            s += sum(trans[path[t - 1], path[t]] + obs[t, path[t]] for t in range(1, n_frames))
            if s > best:
                best, best_path = s, path
        assert tuple(viterbi(obs, trans, init)) == best_path
