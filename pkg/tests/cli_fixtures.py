"""A tiny experiment exercising every CLI command in seconds."""

import json
from pathlib import Path

from hmadapt.cli import main

TINY_CONFIG = {
    "patch": {"crop_size": 32, "out_size": 16},
    "net": {"input_size": 16, "stem_channels": 4, "stage_channels": [4, 8], "blocks_per_stage": [1, 1]},
    "augment": {"translate_sigma": 1.0},
    "train": {"epochs": 1, "epoch_size": 32, "batch_size": 16, "lr": 0.001},
    "finetune": {"epochs": 1, "epoch_size": 32, "batch_size": 16, "lr": 0.001},
    "hm": {"source_quotas": {"normal": 2, "benign": 2, "malignant": 2},
           "target_quotas": {"normal": 2, "benign": 2, "malignant": 2}},
    "synth": {"width": 48, "height": 64, "source_counts": {"train": 24, "val": 12, "test": 12},
              "target_counts": {"train": 24, "val": 12, "test": 12}, "blob_sigma": [2.0, 3.0],
              "texture_sigma": [6.0, 10.0]},
    "data": {"output_dir": "runs/tiny"},
}


def write_config(root: Path, overrides=None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    cfg = json.loads(json.dumps(TINY_CONFIG))
    for section, values in (overrides or {}).items():
        cfg.setdefault(section, {}).update(values)
    path = root / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


def run_all_commands(root: Path) -> list:
    """Run every subcommand once under ``root``; return the exit codes."""
    cfg = str(write_config(root))
    r = str(root)
    vol = root / "vol"
    codes = [main(["synth", "--config", cfg])]
    codes.append(main(["split", "--manifest", f"{r}/data/source/manifest.jsonl",
                       "--out", f"{r}/resplit.jsonl", "--seed", "4"]))
    codes.append(main(["cdf", "--manifest", f"{r}/data/source/manifest.jsonl", "--out", f"{r}/src_cdf.json",
                       "--quota", "normal=2", "benign=2", "malignant=2", "--seed", "1"]))
    codes.append(main(["cdf", "--manifest", f"{r}/data/target/manifest.jsonl", "--out", f"{r}/tgt_cdf.json",
                       "--quota", "normal=2", "benign=2", "malignant=2", "--seed", "1"]))
    codes.append(main(["match", "--images", f"{r}/data/target", "--source-cdf", f"{r}/tgt_cdf.json",
                       "--reference-cdf", f"{r}/src_cdf.json", "--out", f"{r}/matched"]))
    _write_volume(vol)
    codes.append(main(["mip", "--volume", str(vol), "--out", f"{r}/mip.pgm"]))
    codes.append(main(["patchify", "--manifest", f"{r}/data/source/manifest.jsonl", "--split", "test",
                       "--crop", "32", "--size", "16", "--out", f"{r}/patches", "--seed", "2"]))
    codes.append(main(["train", "--config", cfg]))
    for mode in ("test_only", "last_layer", "spottune"):
        for flag in ("--hm", "--no-hm"):
            codes.append(main(["finetune", "--config", cfg, "--mode", mode, flag]))
    codes.append(main(["eval", "--config", cfg, "--domain", "source", "--name", "eval_source"]))
    codes.append(main(["eval", "--config", cfg, "--domain", "target", "--hm",
                       "--checkpoint", f"{r}/runs/tiny/checkpoints/spottune_hm.ckpt"]))
    codes.append(main(["report", "--config", cfg]))
    return codes


def _write_volume(path: Path):
    import numpy as np
    from hmadapt.imaging import Volume3D
    from hmadapt.pgm import write_volume
    write_volume(path, Volume3D.from_array(np.random.default_rng(0).integers(0, 4096, (3, 10, 12)), 4096))


def artifact_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
