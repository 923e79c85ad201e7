"""Write a small synthetic corpus: chirp recordings, reference annotations, chick metadata.

Half the recordings are labelled ``control`` and carry 3-4 kHz chirps, the
other half ``treated`` with 4-5 kHz chirps, so clustering has something to find.

    python3 scripts/make_synthetic_corpus.py --out /tmp/corpus --n-files 4
    chickvox pipeline --config /tmp/corpus/config.yaml
"""

import argparse
from pathlib import Path

import yaml

from chickvox import tables
from chickvox.audio_io import write_wav
from chickvox.synthetic import chirp_recording


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--n-files", type=int, default=4)
    ap.add_argument("--n-calls", type=int, default=20)
    ap.add_argument("--duration", type=float, default=30.0)
    ap.add_argument("--snr-db", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    wav_dir = args.out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    segments, meta = [], []
    for i in range(args.n_files):
        condition = "control" if i % 2 == 0 else "treated"
        band = (3000.0, 4000.0) if condition == "control" else (4000.0, 5000.0)
        sid = f"rec{i:02d}"
        rec = chirp_recording(n_calls=args.n_calls, duration_s=args.duration, snr_db=args.snr_db,
                              f_range=band, seed=args.seed + i, source_id=sid)
        write_wav(wav_dir / f"{sid}.wav", rec.clip)
        segments.extend(rec.calls)
        meta.append({"source_id": sid, "chick_id": f"chick{i:02d}", "condition": condition})

    tables.write_segments(args.out / "annotations.csv", segments)
    tables.write_csv(args.out / "metadata.csv", tables.METADATA_COLUMNS, meta)
    config = {
        "input_dir": str(wav_dir),
        "output_dir": str(args.out / "results"),
        "annotation_csv": str(args.out / "annotations.csv"),
        "metadata_csv": str(args.out / "metadata.csv"),
        "clustering": {"seed": args.seed, "k_max": 6},
    }
    (args.out / "config.yaml").write_text(yaml.safe_dump(config, sort_keys=False))
    print(f"wrote {args.n_files} recordings to {wav_dir}")


if __name__ == "__main__":
    main()
