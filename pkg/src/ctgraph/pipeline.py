"""End-to-end pipeline: synth -> encode -> pool -> graph -> train -> infer -> eval.

Every stage is timed, logged as one JSON line, and written under the output
directory. A failure aborts with the stage name and cause, leaving a STALE
marker listing the stages whose outputs may be partial. Reruns with the same
config and seed reproduce the same summary metrics.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import demo as demo_mod
from .container import ensure_dir
from .encoder import export_pyramid, get_preset, synth_encode
from .errors import ConfigError, CtGraphError
from .gat import GatConfig, forward as gat_forward
from .graph import (
    build_graph,
    default_hierarchy,
    load_hierarchy,
    save_graph,
    save_hierarchy,
)
from .heads import (
    TrainConfig,
    build_probe_features,
    export_tokens,
    save_token_export,
    train_gat_classifier,
    train_probe,
)
from .metrics import macro_prf1
from .pooling import pool_all, save_pooled
from .volume import generate_phantom, load_phantom_spec, save_mask, save_volume

def log_event(stage: str, event: str, **extra) -> None:
    record = {"ts": round(time.time(), 3), "stage": stage, "event": event}
    record.update(extra)
    print(json.dumps(record), file=sys.stderr)


@dataclass
class PipelineConfig:
    seed: int = 7
    out_dir: str = "pipeline_out"
    preset: str = "demo"
    hierarchy: str | None = None
    topology: str = "hierarchical"
    phantom_spec: str | None = None
    num_samples: int = 16
    probe: dict = field(default_factory=dict)
    gat_train: dict = field(default_factory=dict)
    gat: dict = field(default_factory=dict)
    probe_granularity: str = "fine"

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"pipeline config not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "preset": self.preset,
            "hierarchy": self.hierarchy,
            "topology": self.topology,
            "phantom_spec": self.phantom_spec,
            "num_samples": self.num_samples,
            "probe": self.probe,
            "gat_train": self.gat_train,
            "gat": self.gat,
            "probe_granularity": self.probe_granularity,
        }


def _check_inputs_exist(cfg: PipelineConfig) -> None:
    for label, path in (("hierarchy", cfg.hierarchy), ("phantom_spec", cfg.phantom_spec)):
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{label} file not found: {path}")


def run_pipeline(cfg: PipelineConfig, out_dir=None) -> dict:
    """Run every stage; returns the summary dict (also written as summary.json)."""
    out = ensure_dir(out_dir or cfg.out_dir)
    _check_inputs_exist(cfg)
    summary: dict = {"config": cfg.resolved(), "stages": {}, "metrics": {}}
    stale_path = out / "STALE"
    started: list[str] = []
    t_total = time.perf_counter()
    try:
        hierarchy = (
            load_hierarchy(cfg.hierarchy) if cfg.hierarchy else default_hierarchy()
        )
        spec = (
            load_phantom_spec(cfg.phantom_spec)
            if cfg.phantom_spec
            else demo_mod.demo_phantom_spec(hierarchy)
        )
        preset = get_preset(cfg.preset)

        # synth ------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("synth")
        log_event("synth", "start", samples=cfg.num_samples)
        synth_dir = ensure_dir(out / "synth")
        volumes, masks, targets = [], [], []
        for i in range(cfg.num_samples):
            volume, mask, target = generate_phantom(spec.with_seed(cfg.seed + i))
            save_volume(synth_dir / f"vol_{i:03d}.bin", volume)
            save_mask(synth_dir / f"mask_{i:03d}.bin", mask)
            volumes.append(volume)
            masks.append(mask)
            targets.append(target)
        targets = np.stack(targets)
        summary["stages"]["synth"] = round(time.perf_counter() - stage_t, 3)

        # encode -----------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("encode")
        log_event("encode", "start", preset=preset.name)
        pyramids = [synth_encode(v, preset, seed=cfg.seed) for v in volumes]
        export_pyramid(pyramids[0], out / "encode" / "sample_000")
        summary["stages"]["encode"] = round(time.perf_counter() - stage_t, 3)

        # pool ---------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("pool")
        log_event("pool", "start")
        pool_dir = ensure_dir(out / "pool")
        pooled = []
        for i, (pyramid, mask) in enumerate(zip(pyramids, masks)):
            sample = pool_all(pyramid, mask, hierarchy)
            save_pooled(pool_dir / f"feats_{i:03d}.bin", *sample)
            pooled.append(sample)
        summary["stages"]["pool"] = round(time.perf_counter() - stage_t, 3)

        # graph --------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("graph")
        log_event("graph", "start", topology=cfg.topology)
        graph = build_graph(hierarchy, cfg.topology, seed=cfg.seed)
        save_hierarchy(out / "anatomy.json", hierarchy)
        save_graph(out / "graph.json", graph)
        summary["stages"]["graph"] = round(time.perf_counter() - stage_t, 3)

        # train --------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("train")
        probe_cfg = TrainConfig.from_json({"seed": cfg.seed, **cfg.probe})
        gat_cfg_train = TrainConfig.from_json(
            {"mode": "gat", "lr": 5e-5, "seed": cfg.seed, **cfg.gat_train}
        )
        log_event("train", "start", probe_epochs=probe_cfg.epochs, gat_epochs=gat_cfg_train.epochs)
        features = np.stack(
            [
                build_probe_features(*sample, granularity=cfg.probe_granularity)
                for sample in pooled
            ]
        )
        probe, probe_trace, probe_info = train_probe(features, targets, probe_cfg)
        gat_config = GatConfig(
            c_total=preset.c_total,
            c_last=preset.channels[-1],
            **{k: tuple(v) if k == "mlp_hidden" else v for k, v in cfg.gat.items()},
        )
        clf, gat_trace, gat_info = train_gat_classifier(
            pooled, targets, graph, gat_config, gat_cfg_train
        )
        clf.save(out / "ckpt")
        summary["stages"]["train"] = round(time.perf_counter() - stage_t, 3)
        summary["metrics"]["probe_f1"] = probe_trace[-1]["f1"] if probe_trace else None
        summary["metrics"]["gat_f1"] = gat_trace[-1]["f1"] if gat_trace else None
        summary["metrics"]["probe_info"] = probe_info
        summary["metrics"]["gat_info"] = gat_info

        # infer ---------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("infer")
        log_event("infer", "start")
        fwd = gat_forward(graph, *pooled[0], clf.gat)
        save_token_export(out / "tokens.bin", export_tokens(fwd))
        summary["stages"]["infer"] = round(time.perf_counter() - stage_t, 3)

        # eval ----------------------------------------------------------------
        stage_t = time.perf_counter()
        started.append("eval")
        log_event("eval", "start")
        predictions = np.stack([clf.predict(graph, s) for s in pooled])
        scores = macro_prf1(predictions, targets)
        report = {
            "ce": {
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
            }
        }
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        summary["metrics"]["eval_ce_f1"] = scores.f1
        summary["stages"]["eval"] = round(time.perf_counter() - stage_t, 3)
    except Exception as exc:
        stage = started[-1] if started else "setup"
        stale_path.write_text(
            json.dumps({"failed_stage": stage, "cause": str(exc), "stages_started": started})
        )
        log_event(stage, "failed", cause=str(exc))
        if isinstance(exc, CtGraphError):
            raise
        raise CtGraphError(f"stage '{stage}' failed: {exc}") from exc

    if stale_path.exists():
        stale_path.unlink()
    summary["total_seconds"] = round(time.perf_counter() - t_total, 3)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    log_event("run", "done", total_seconds=summary["total_seconds"])
    return summary
