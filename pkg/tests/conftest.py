import numpy as np
import pytest

from chickvox.audio_io import AudioClip
from chickvox.synthetic import chirp_recording

SR = 44100

# filled by test_acceptance; printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def tone(freq, dur=0.2, sr=SR, amp=1.0, phase=0.0):
    t = np.arange(int(round(dur * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def clip_of(x, sr=SR, sid="t"):
    return AudioClip(np.asarray(x, dtype=np.float64), sr, sid)


@pytest.fixture(scope="session")
def recording60():
    return chirp_recording(n_calls=50, duration_s=60.0, snr_db=20.0, seed=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_corpus(root, n_files=2, n_calls=5, duration_s=5.0, seed=0):
    """WAVs, reference annotations and chick metadata under ``root``."""
    from chickvox import tables
    from chickvox.audio_io import write_wav

    wav_dir = root / "wav"
    wav_dir.mkdir(parents=True)
    segments, meta = [], []
    for i in range(n_files):
        sid = f"rec{i}"
        band = (3000.0, 4000.0) if i % 2 == 0 else (4500.0, 5500.0)
        rec = chirp_recording(n_calls=n_calls, duration_s=duration_s, f_range=band,
                              seed=seed + i, source_id=sid)
        write_wav(wav_dir / f"{sid}.wav", rec.clip)
        segments.extend(rec.calls)
        meta.append({"source_id": sid, "chick_id": f"c{i}", "condition": "ctrl" if i % 2 == 0 else "vpa"})
    tables.write_segments(root / "annotations.csv", segments)
    tables.write_csv(root / "metadata.csv", tables.METADATA_COLUMNS, meta)
    return wav_dir


@pytest.fixture
def corpus(tmp_path):
    return make_corpus(tmp_path)
