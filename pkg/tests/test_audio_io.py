import numpy as np
import pytest
from scipy.io import wavfile

from chickvox.audio_io import (AudioClip, AudioError, BandpassSpec, NormalizationError, bandpass,
                               load_wav, normalize_max_loudness, write_wav)
from conftest import SR, clip_of, tone


def rms(x):
    return float(np.sqrt(np.mean(np.asarray(x) ** 2)))


def test_silent_pcm16_file_loads_as_zeros(tmp_path):
    wavfile.write(tmp_path / "quiet.wav", SR, np.zeros(SR, dtype=np.int16))
    clip = load_wav(tmp_path / "quiet.wav")
    assert clip.samples.shape == (SR,)
    assert not clip.samples.any()
    assert clip.sample_rate == SR
    assert clip.source_id == "quiet"


@pytest.mark.parametrize("left,right,expected", [(0.5, -0.5, 0.0), (0.2, 0.6, 0.4)])
def test_stereo_is_averaged(tmp_path, left, right, expected):
    data = np.column_stack([np.full(1000, left), np.full(1000, right)]).astype(np.float32)
    wavfile.write(tmp_path / "st.wav", SR, data)
    clip = load_wav(tmp_path / "st.wav")
    oracle = (np.float64(np.float32(left)) + np.float64(np.float32(right))) / 2
    assert clip.samples == pytest.approx(np.full(1000, oracle), abs=1e-12)
    assert clip.samples == pytest.approx(np.full(1000, expected), abs=1e-7)


def test_pcm16_roundtrip(tmp_path):
    x = tone(3000, 0.1, amp=0.5)
    write_wav(tmp_path / "a.wav", clip_of(x))
    back = load_wav(tmp_path / "a.wav")
    assert np.max(np.abs(back.samples - x)) <= 1 / 32768


def test_float32_roundtrip(tmp_path):
    x = tone(3000, 0.1, amp=0.5)
    write_wav(tmp_path / "a.wav", clip_of(x), encoding="float32")
    assert np.allclose(load_wav(tmp_path / "a.wav").samples, x, atol=1e-7)


def test_unreadable_and_unsupported_files(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioError):
        load_wav(tmp_path / "bad.wav")
    wavfile.write(tmp_path / "i32.wav", SR, np.zeros(10, dtype=np.int32))
    with pytest.raises(AudioError, match="encoding"):
        load_wav(tmp_path / "i32.wav")


@pytest.mark.parametrize("bad", [np.array([]), np.array([0.0, np.nan]), np.zeros((2, 2))])
def test_clip_rejects_invalid_samples(bad):
    with pytest.raises(AudioError):
        AudioClip(bad, SR)


def test_clip_rejects_bad_rate():
    with pytest.raises(AudioError):
        AudioClip(np.zeros(4), 0)


def test_clip_slice_and_duration():
    clip = clip_of(np.arange(SR, dtype=float))
    assert clip.duration_s == pytest.approx(1.0)
    part = clip.slice_s(0.5, 0.6)
    assert part.samples[0] == 22050
    assert part.samples.size == 4410


def test_normalize_scales_peak_to_one():
    x = np.array([0.1, -0.25, 0.2])
    out = normalize_max_loudness(clip_of(x))
    assert np.allclose(out.samples, x * 4)
    assert np.max(np.abs(out.samples)) == 1.0


def test_normalize_is_identity_at_unit_peak():
    x = np.array([1.0, -0.5, 0.25])
    assert np.array_equal(normalize_max_loudness(clip_of(x)).samples, x)


def test_normalize_sine_rms_scales_tenfold():
    t = np.arange(SR) / SR
    x = 0.1 * np.sin(2 * np.pi * 440 * t + 0.3)
    out = normalize_max_loudness(clip_of(x)).samples
    assert np.max(np.abs(out)) == pytest.approx(1.0)
    assert rms(out) / rms(x) == pytest.approx(1 / np.max(np.abs(x)), rel=1e-12)
    assert rms(out) / rms(x) == pytest.approx(10.0, rel=1e-3)


def test_normalize_rejects_silence():
    with pytest.raises(NormalizationError):
        normalize_max_loudness(clip_of(np.zeros(10)))


def test_bandpass_rejects_out_of_band_tone():
    x = tone(500, 1.0)
    y = bandpass(clip_of(x), BandpassSpec()).samples
    assert rms(y) < 0.01 * rms(x)


def test_bandpass_passes_in_band_tone():
    x = tone(5000, 1.0)
    y = bandpass(clip_of(x), BandpassSpec()).samples
    assert abs(rms(y) / rms(x) - 1) < 0.05


def test_bandpass_of_zeros_is_zero():
    assert not bandpass(clip_of(np.zeros(4096)), BandpassSpec()).samples.any()


def test_bandpass_band_checked_against_rate():
    with pytest.raises(ValueError, match="sample rate"):
        bandpass(clip_of(np.zeros(4096), sr=16000), BandpassSpec())


def test_bandpass_is_zero_phase():
    x = np.zeros(SR // 2)
    n = np.arange(-200, 201)
    # windowed 5 kHz click centred at sample 10000
    x[10000 + n] = np.cos(2 * np.pi * 5000 * n / SR) * np.hanning(n.size)
    y = bandpass(clip_of(x), BandpassSpec()).samples
    assert abs(int(np.argmax(np.abs(y))) - 10000) < SR * 0.001
