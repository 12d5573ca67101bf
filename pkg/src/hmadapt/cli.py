"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 I/O error.
``HMADAPT_OUTPUT_ROOT`` relocates every run's output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import histmatch as hm
from . import pipeline
from .adapt import FinetuneMode
from .config import ExperimentConfig
from .data import PatchDataset
from .errors import ConfigError, HmAdaptError, ImageIOError
from .imaging import mip
from .patches import (SPLITS, ManifestRecord, PatchSpec, choose_center, extract_patch, read_manifest,
                      split_patients, write_manifest)
from .pgm import read_pgm, read_volume, write_pgm
from .synth import synthesize

log = logging.getLogger("hmadapt")


def _config(args, *need_paths: str) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    cfg.check_paths(*need_paths)
    return cfg


def _quotas(items) -> dict:
    out = {}
    for item in items:
        cls, sep, n = item.partition("=")
        if not sep or not n.isdigit():
            raise ConfigError([("--quota", f"expected CLASS=COUNT, got {item!r}")])
        out[cls] = int(n)
    return out


# --- data commands -----------------------------------------------------------

def cmd_init(args):
    cfg = ExperimentConfig.desk() if args.preset == "desk" else ExperimentConfig.paper()
    cfg.save(args.out)
    print(args.out)


def cmd_synth(args):
    cfg = _config(args)
    out = Path(args.out) if args.out else cfg.source_manifest.parent.parent
    info = synthesize(cfg.synth, out, cfg.seeds.synth if args.seed is None else args.seed)
    print(f"source: {info['source']} ({info['source_records']} images)")
    print(f"target: {info['target']} ({info['target_records']} images)")


def cmd_split(args):
    records = read_manifest(args.manifest)
    if len(args.ratios) != len(SPLITS):
        raise ConfigError([("--ratios", f"need {len(SPLITS)} ratios")])
    assignment = split_patients({r.patient_id for r in records}, args.ratios,
                                np.random.default_rng(args.seed))
    out = [ManifestRecord(r.image_path, r.class4, r.patient_id, assignment[r.patient_id], r.annotation)
           for r in records]
    write_manifest(args.out, out)
    counts = {s: sum(1 for r in out if r.split == s) for s in SPLITS}
    print(" ".join(f"{s}={n}" for s, n in counts.items()))


def cmd_cdf(args):
    quotas = _quotas(args.quota) if args.quota else hm.CorpusCdfSpec().quotas
    manifest = Path(args.manifest)
    cdf = pipeline.domain_cdf(manifest, quotas, np.random.default_rng(args.seed), args.levels, args.split)
    hm.save_json(args.out, cdf)
    print(args.out)


def _pgm_files(root: Path):
    return sorted(p for p in root.rglob("*.pgm") if p.is_file())


def cmd_match(args):
    f_s, f_r = hm.load_json(args.source_cdf), hm.load_json(args.reference_cdf)
    if not isinstance(f_s, hm.Cdf) or not isinstance(f_r, hm.Cdf):
        raise ConfigError([("--source-cdf/--reference-cdf", "expected CDF files")])
    lut = hm.build_hm_lut(f_s, f_r)
    src, out = Path(args.images), Path(args.out)
    files = _pgm_files(src)
    for path in files:
        write_pgm(out / path.relative_to(src), hm.match_to_reference(read_pgm(path), lut))
    if (src / "manifest.jsonl").is_file():
        shutil.copyfile(src / "manifest.jsonl", out / "manifest.jsonl")
    hm.save_json(out / "lut.json", lut)
    print(f"matched {len(files)} images into {out}")


def cmd_mip(args):
    write_pgm(args.out, mip(read_volume(args.volume)))
    print(args.out)


def cmd_patchify(args):
    spec = PatchSpec(args.crop, args.size)
    ds = PatchDataset.from_manifest(args.manifest, spec, args.split, args.threshold)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    lines = []
    for i, r in enumerate(ds.records):
        name = f"{i:05d}.pgm"
        cx, cy = choose_center(r, ds.images[r.image_path], ds.masks[r.image_path], spec, rng)
        write_pgm(out / name, extract_patch(ds.images[r.image_path], (cx, cy), spec))
        lines.append(json.dumps({"patch_path": name, "image_path": r.image_path, "class4": r.class4,
                                 "label": r.label, "patient_id": r.patient_id, "split": r.split,
                                 "center": [cx, cy]}))
    (out / "patches.jsonl").write_text("".join(line + "\n" for line in lines))
    print(f"wrote {len(lines)} patches to {out}")


# --- experiment commands -----------------------------------------------------

def cmd_train(args):
    cfg = _config(args, "source_manifest")
    pipeline.write_run_metadata(cfg, "train")
    result, report = pipeline.run_train(cfg)
    print(f"best epoch {result.best_epoch}; source test AUC {report.summary()}")


def _hm_flag(args, cfg) -> bool:
    return cfg.hm.enabled if args.hm is None else args.hm


def cmd_finetune(args):
    cfg = _config(args, "source_manifest", "target_manifest")
    mode = args.mode or cfg.finetune.mode
    hm_on = _hm_flag(args, cfg)
    pipeline.write_run_metadata(cfg, f"finetune:{mode}:{pipeline.tag(hm_on)}")
    _, report, stats = pipeline.run_finetune(cfg, mode, hm_on)
    line = f"{mode} ({pipeline.tag(hm_on)}) target test AUC {report.summary()}"
    if stats is not None:
        line += " policy " + " ".join(f"{p:.2f}" for p in stats.finetune_probability)
    print(line)


def cmd_eval(args):
    cfg = _config(args, "source_manifest" if args.domain == "source" else "target_manifest")
    hm_on = _hm_flag(args, cfg) and args.domain == "target"
    if hm_on:
        cfg.check_paths("source_manifest")
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / "checkpoints" / "base.ckpt"
    report = pipeline.run_eval(cfg, ckpt, args.domain, hm_on, args.name)
    print(f"{args.domain} test AUC {report.summary()}")


def cmd_report(args):
    cfg = _config(args)
    if args.run_matrix:
        cfg.check_paths("source_manifest", "target_manifest")
        pipeline.write_run_metadata(cfg, "report:matrix")
        pipeline.run_matrix(cfg)
    path = pipeline.write_summary(cfg)
    print(path.read_text(), end="")


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmadapt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hmadapt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        return sp

    def hm_switch(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--hm", dest="hm", action="store_true", default=None,
                       help="histogram-match target images to the source domain")
        g.add_argument("--no-hm", dest="hm", action="store_false")

    sp = sub.add_parser("init", help="write a config file from a preset")
    sp.add_argument("--preset", choices=("desk", "paper"), default="desk")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_init)

    sp = with_config(sub.add_parser("synth", help="generate the synthetic source/target corpora"))
    sp.add_argument("--out", help="output directory (default: two levels above the source manifest)")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("split", help="assign train/val/test splits by patient")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ratios", type=float, nargs="+", default=[0.8, 0.1, 0.1])
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("cdf", help="average CDF of a manifest split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=SPLITS, default="train")
    sp.add_argument("--quota", nargs="*", help="CLASS=COUNT draws (default 400 each of "
                                               "normal, benign, malignant)")
    sp.add_argument("--levels", type=int, default=hm.COMMON_LEVELS)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_cdf)

    sp = sub.add_parser("match", help="histogram-match a directory of PGM images")
    sp.add_argument("--images", required=True)
    sp.add_argument("--source-cdf", required=True)
    sp.add_argument("--reference-cdf", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("mip", help="maximum intensity projection of a slice directory")
    sp.add_argument("--volume", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mip)

    sp = sub.add_parser("patchify", help="extract one patch per record")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=SPLITS)
    sp.add_argument("--crop", type=int, default=1024)
    sp.add_argument("--size", type=int, default=512)
    sp.add_argument("--threshold", type=float, default=0.02)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_patchify)

    sp = with_config(sub.add_parser("train", help="train the base model on the source domain"))
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("finetune", help="adapt the base model to the target domain"))
    sp.add_argument("--mode", choices=[m.value for m in FinetuneMode])
    hm_switch(sp)
    sp.set_defaults(func=cmd_finetune)

    sp = with_config(sub.add_parser("eval", help="evaluate a checkpoint on a test split"))
    sp.add_argument("--checkpoint", help="default: the base checkpoint of the run")
    sp.add_argument("--domain", choices=("source", "target"), default="source")
    sp.add_argument("--name", help="report name")
    hm_switch(sp)
    sp.set_defaults(func=cmd_eval)

    sp = with_config(sub.add_parser("report", help="summarise the run's reports"))
    sp.add_argument("--run-matrix", action="store_true",
                    help="first run training and every mode with and without HM")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error: {path + ': ' if path else ''}{msg}", file=sys.stderr)
        return exc.exit_code
    except HmAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return ImageIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
