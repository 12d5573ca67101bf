"""End-to-end experiment steps shared by the CLI and the acceptance suite.

Layout of an output directory::

    run.json                     config, config hash, seeds, versions
    hm/source_cdf.json, hm/target_cdf.json, hm/lut.json
    checkpoints/base.ckpt, checkpoints/<mode>_<hm|nohm>.ckpt
    reports/<name>.json, reports/<name>_roc.csv, reports/<name>_policy.csv
    summary.csv
"""

from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import histmatch as hm
from .adapt import (FinetuneMode, PolicyStats, SpotTuneNet, finetune_last_layer, make_spottune,
                    policy_stats, spottune_predict_proba, spottune_train)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import PatchDataset, load_record_image
from .metrics import EvalReport, seeded_eval
from .nn import init_params, predict_proba, train
from .patches import read_manifest

log = logging.getLogger(__name__)

DOMAINS = ("source", "target")


def run_metadata(cfg: ExperimentConfig, command: str) -> dict:
    return {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seeds": cfg.to_dict()["seeds"],
        "versions": {"hmadapt": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "std_kind": "population",
    }


def write_run_metadata(cfg: ExperimentConfig, command: str) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.json"
    path.write_text(json.dumps(run_metadata(cfg, command), indent=2, sort_keys=True) + "\n")
    return path


# --- histogram matching ------------------------------------------------------

@dataclass
class HmArtifacts:
    source_cdf: hm.Cdf
    target_cdf: hm.Cdf
    lut: hm.HmLut

    def transform(self, img):
        return hm.match_to_reference(img, self.lut)


def domain_cdf(manifest: Path, quotas: dict, rng: np.random.Generator, levels: int,
               split: str = "train") -> hm.Cdf:
    records = [r for r in read_manifest(manifest) if r.split == split]
    return hm.average_cdf(records, hm.CorpusCdfSpec(dict(quotas)), rng,
                          lambda r: load_record_image(manifest.parent, r), levels)


def compute_hm(cfg: ExperimentConfig, save: bool = True) -> HmArtifacts:
    """Average CDFs of both training corpora and the target->source table."""
    src_rng, tgt_rng = np.random.default_rng(cfg.seeds.hm).spawn(2)
    f_src = domain_cdf(cfg.source_manifest, cfg.hm.source_quotas, src_rng, cfg.hm.levels)
    f_tgt = domain_cdf(cfg.target_manifest, cfg.hm.target_quotas, tgt_rng, cfg.hm.levels)
    art = HmArtifacts(f_src, f_tgt, hm.build_hm_lut(f_tgt, f_src))
    if save:
        d = cfg.output_dir / "hm"
        hm.save_json(d / "source_cdf.json", f_src)
        hm.save_json(d / "target_cdf.json", f_tgt)
        hm.save_json(d / "lut.json", art.lut)
    return art


def load_or_compute_hm(cfg: ExperimentConfig) -> HmArtifacts:
    d = cfg.output_dir / "hm"
    if all((d / n).is_file() for n in ("source_cdf.json", "target_cdf.json", "lut.json")):
        return HmArtifacts(hm.load_json(d / "source_cdf.json"), hm.load_json(d / "target_cdf.json"),
                           hm.load_json(d / "lut.json"))
    return compute_hm(cfg)


# --- datasets ----------------------------------------------------------------

def dataset(cfg: ExperimentConfig, domain: str, split: str,
            art: HmArtifacts | None = None) -> PatchDataset:
    """Patch dataset for one split; ``art`` applies HM to target images."""
    manifest = cfg.source_manifest if domain == "source" else cfg.target_manifest
    transform = art.transform if (art is not None and domain == "target") else None
    return PatchDataset.from_manifest(manifest, cfg.patch.spec(), split, cfg.patch.threshold, transform)


def tag(hm_on: bool) -> str:
    return "hm" if hm_on else "nohm"


def _score_fn(model):
    if isinstance(model, SpotTuneNet):
        return lambda x: spottune_predict_proba(model, x)
    return lambda x: predict_proba(model, x)


def evaluate(cfg: ExperimentConfig, model, ds: PatchDataset, metadata: dict) -> EvalReport:
    return seeded_eval(_score_fn(model), ds, list(cfg.seeds.eval), metadata)


def save_report(cfg: ExperimentConfig, name: str, report: EvalReport,
                stats: PolicyStats | None = None) -> Path:
    d = cfg.output_dir / "reports"
    d.mkdir(parents=True, exist_ok=True)
    report.save(d / f"{name}.json", d / f"{name}_roc.csv")
    if stats is not None:
        stats.to_csv(d / f"{name}_policy.csv")
    return d / f"{name}.json"


# --- commands --------------------------------------------------------------

def run_train(cfg: ExperimentConfig):
    """Train the base model on the source domain and report source-test AUC."""
    train_ds, val_ds = dataset(cfg, "source", "train"), dataset(cfg, "source", "val")
    net = init_params(cfg.net, np.random.default_rng(cfg.seeds.init))
    result = train(net, train_ds, val_ds, cfg.train, cfg.augment, np.random.default_rng(cfg.seeds.train))
    ckpt = cfg.output_dir / "checkpoints" / "base.ckpt"
    save_checkpoint(ckpt, result.best, result.optimizer,
                    {"best_epoch": result.best_epoch, "val_auc": result.history,
                     "config_sha256": cfg.digest()})
    report = evaluate(cfg, result.best, dataset(cfg, "source", "test"),
                      {"mode": "test_only", "domain": "source", "hm": False, "stage": "train",
                       "best_epoch": result.best_epoch, "val_auc_history": result.history})
    save_report(cfg, "base_source", report)
    return result, report


def load_base(cfg: ExperimentConfig):
    model, _, _ = load_checkpoint(cfg.output_dir / "checkpoints" / "base.ckpt")
    return model


def run_finetune(cfg: ExperimentConfig, mode: FinetuneMode | str, hm_on: bool, base=None):
    """Adapt ``base`` to the target domain and report target-test AUC.

    Returns ``(model, report, policy_stats_or_None)``.
    """
    mode = FinetuneMode(mode)
    base = base if base is not None else load_base(cfg)
    art = load_or_compute_hm(cfg) if hm_on else None
    name = f"{mode.value}_{tag(hm_on)}"
    meta = {"mode": mode.value, "domain": "target", "hm": hm_on}
    test_ds = dataset(cfg, "target", "test", art)
    stats = None
    if mode is FinetuneMode.TEST_ONLY:
        model = base
    else:
        train_ds, val_ds = dataset(cfg, "target", "train", art), dataset(cfg, "target", "val", art)
        rng = np.random.default_rng(cfg.seeds.finetune)
        ft = cfg.finetune.train_config()
        if mode is FinetuneMode.LAST_LAYER:
            result = finetune_last_layer(base, train_ds, val_ds, ft, cfg.augment, rng)
        else:
            net = make_spottune(base, np.random.default_rng(cfg.seeds.policy), cfg.spottune.temperature)
            result = spottune_train(net, train_ds, val_ds, ft, cfg.augment, rng)
        model = result.best
        meta.update(best_epoch=result.best_epoch, val_auc_history=result.history)
        save_checkpoint(cfg.output_dir / "checkpoints" / f"{name}.ckpt", model, result.optimizer,
                        {"mode": mode.value, "hm": hm_on, "best_epoch": result.best_epoch,
                         "config_sha256": cfg.digest()})
    report = evaluate(cfg, model, test_ds, meta)
    if isinstance(model, SpotTuneNet):
        x, _ = test_ds.extract_all(np.random.default_rng(cfg.seeds.eval[0]), model.frozen.dtype)
        stats = policy_stats(model, x)
        report.metadata["policy_finetune_probability"] = stats.finetune_probability.tolist()
    save_report(cfg, name, report, stats)
    return model, report, stats


def run_eval(cfg: ExperimentConfig, checkpoint, domain: str, hm_on: bool, name: str | None = None):
    model, _, meta = load_checkpoint(checkpoint)
    art = load_or_compute_hm(cfg) if (hm_on and domain == "target") else None
    mode = meta.get("mode", "test_only")
    report = evaluate(cfg, model, dataset(cfg, domain, "test", art),
                      {"mode": mode, "domain": domain, "hm": bool(art), "checkpoint": Path(checkpoint).name})
    stats = None
    if isinstance(model, SpotTuneNet):
        x, _ = dataset(cfg, domain, "test", art).extract_all(np.random.default_rng(cfg.seeds.eval[0]),
                                                             model.frozen.dtype)
        stats = policy_stats(model, x)
    save_report(cfg, name or f"eval_{Path(checkpoint).stem}_{domain}_{tag(bool(art))}", report, stats)
    return report


def run_matrix(cfg: ExperimentConfig, modes=tuple(FinetuneMode), hm_settings=(False, True),
               base=None) -> dict:
    """Base training (unless ``base`` is given) and every requested cell of the table."""
    reports = {}
    if base is None:
        result, reports["base_source"] = run_train(cfg)
        base = result.best
    for hm_on in hm_settings:
        for mode in modes:
            _, rep, _ = run_finetune(cfg, mode, hm_on, base)
            reports[f"{FinetuneMode(mode).value}_{tag(hm_on)}"] = rep
    write_summary(cfg)
    return reports


def collect_reports(cfg: ExperimentConfig) -> dict:
    d = cfg.output_dir / "reports"
    out = {}
    for path in sorted(d.glob("*.json")) if d.is_dir() else []:
        out[path.stem] = EvalReport.from_json(json.loads(path.read_text()))
    return out


def write_summary(cfg: ExperimentConfig) -> Path:
    reports = collect_reports(cfg)
    path = cfg.output_dir / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["report", "mode", "domain", "hm", "mean_auc", "std_auc", "seeds"])
        for name, rep in reports.items():
            m = rep.metadata
            w.writerow([name, m.get("mode", ""), m.get("domain", ""), m.get("hm", ""),
                        f"{rep.mean:.4f}", f"{rep.std:.4f}", " ".join(map(str, rep.seeds))])
    return path
