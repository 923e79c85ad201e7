"""Command line: ``chickvox {detect,extract,cluster,evaluate,select,pipeline,config}``.

Exit codes: 0 ok, 1 total failure or no input, 2 configuration error,
3 partial failure (some files failed). The log level comes from
``CHICKVOX_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import yaml

from . import __version__, pipeline
from .config import ConfigError, check_paths, dump_default_config, load_config

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("chickvox")


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chickvox", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"chickvox {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--output-dir", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes for per-file stages")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. --set detection.offset_method=local_min")

    for name, help_ in (("detect", "find call onsets and offsets in every WAV"),
                        ("extract", "compute the 20 descriptors for each detected call"),
                        ("cluster", "run the clustering grid and write assignments"),
                        ("evaluate", "score detections against annotations"),
                        ("select", "correlation, VIF, feature pruning and binned counts"),
                        ("pipeline", "detect, extract, cluster, then evaluate/select when configured")):
        s = sub.add_parser(name, parents=[common], help=help_)
        if name in ("detect", "extract", "pipeline"):
            s.add_argument("--input-dir", help="directory of WAV recordings")
        if name in ("evaluate", "pipeline"):
            s.add_argument("--annotations", help="reference segments CSV")
        if name == "evaluate":
            s.add_argument("--predictions", help="predicted segments CSV (default: output segments.csv)")
        if name == "extract":
            s.add_argument("--segments", help="segments CSV (default: output segments.csv)")
        if name in ("cluster", "select"):
            s.add_argument("--features", help="features CSV (default: output features.csv)")
        if name in ("select", "pipeline"):
            s.add_argument("--metadata", help="CSV with source_id,chick_id,condition")
        if name in ("cluster", "pipeline"):
            s.add_argument("--seed", type=int, help="seed for stochastic clustering methods")
    sub.add_parser("config", help="print the default configuration as YAML")
    return p


def _overrides(args) -> dict:
    flags = {"input_dir": "input_dir", "output_dir": "output_dir", "workers": "workers",
             "annotations": "annotation_csv", "metadata": "metadata_csv", "seed": "clustering.seed"}
    out = {}
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    out.update(_parse_set(args.set))
    return out


def _required_paths(command: str, cfg) -> list[str]:
    need = {"detect": ["input_dir"], "extract": ["input_dir"], "evaluate": ["annotation_csv"],
            "select": ["metadata_csv"], "cluster": []}.get(command)
    if need is None:
        need = ["input_dir"] + [k for k in ("annotation_csv", "metadata_csv") if getattr(cfg, k)]
    return need


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CHICKVOX_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "config":
        sys.stdout.write(dump_default_config())
        return EXIT_OK
    try:
        cfg = load_config(args.config, _overrides(args))
        check_paths(cfg, _required_paths(args.command, cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run = pipeline.Run(cfg)
    try:
        if args.command == "detect":
            pipeline.run_detect(run)
        elif args.command == "extract":
            pipeline.run_extract(run, args.segments)
        elif args.command == "cluster":
            pipeline.run_cluster(run, args.features)
        elif args.command == "evaluate":
            pipeline.run_evaluate(run, args.predictions)
        elif args.command == "select":
            pipeline.run_select(run, args.features)
        else:
            pipeline.run_pipeline(run)
    except (pipeline.StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.manifest.write(run.out)
        run.write_report()
        return EXIT_FAILURE
    if run.report.failed_files:
        print(f"{len(run.report.failed_files)} file(s) failed; see {run.out / pipeline.REPORT_JSON}",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK
