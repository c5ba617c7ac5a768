"""Command-line entry point wiring the pipeline stages.

Subcommands: synth, encode, pool, graph, train, infer, eval, run.
Exit codes: 0 ok, 1 runtime failure, 2 config/validation error.
Set CT_GRAPH_THREADS (or pass --threads) before heavy runs to cap BLAS
worker threads; the package's own kernels are single-threaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .container import ensure_dir
from .encoder import get_preset, load_pyramid, synth_encode
from .errors import ConfigError, CtGraphError, FormatError, ValidationError
from .gat import GatConfig, forward as gat_forward
from .graph import build_graph, default_hierarchy, load_graph, load_hierarchy, save_graph
from .heads import (
    TrainConfig,
    export_tokens,
    read_manifest,
    save_token_export,
    train_gat_classifier,
    train_probe,
)
from .metrics import bleu_n, macro_prf1, rouge_l, tokenize
from .pipeline import PipelineConfig, log_event, run_pipeline
from .pooling import load_pooled, pool_all, save_pooled
from .volume import (
    generate_phantom,
    load_mask,
    load_phantom_spec,
    load_volume,
    save_mask,
    save_volume,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def cmd_synth(args) -> int:
    spec = load_phantom_spec(_require(args.spec, "phantom spec"))
    out = ensure_dir(args.out)
    records = []
    for i in range(args.count):
        volume, mask, target = generate_phantom(spec.with_seed(args.seed + i))
        save_volume(out / f"vol_{i:03d}.bin", volume)
        save_mask(out / f"mask_{i:03d}.bin", mask)
        records.append(
            {
                "id": i,
                "volume": f"vol_{i:03d}.bin",
                "mask": f"mask_{i:03d}.bin",
                "labels": target.tolist(),
            }
        )
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    log_event("synth", "done", count=args.count, out=str(out))
    return EXIT_OK


def cmd_encode(args) -> int:
    preset = get_preset(args.preset, registry_path=args.presets)
    volume = load_volume(_require(args.infile, "volume"))
    pyramid = synth_encode(volume, preset, seed=args.seed)
    from .encoder import export_pyramid

    export_pyramid(pyramid, args.out)
    log_event("encode", "done", preset=preset.name, layers=pyramid.num_layers, out=args.out)
    return EXIT_OK


def cmd_pool(args) -> int:
    pyramid = load_pyramid(_require(args.pyramid, "pyramid directory"))
    mask = load_mask(_require(args.mask, "mask"))
    hierarchy = (
        load_hierarchy(_require(args.hierarchy, "hierarchy"))
        if args.hierarchy
        else default_hierarchy()
    )
    fine_set, coarse_set, grid = pool_all(pyramid, mask, hierarchy)
    save_pooled(args.out, fine_set, coarse_set, grid)
    log_event(
        "pool",
        "done",
        fine=fine_set.num_regions,
        coarse=coarse_set.num_regions,
        out=args.out,
    )
    return EXIT_OK


def cmd_graph(args) -> int:
    hierarchy = (
        load_hierarchy(_require(args.hierarchy, "hierarchy"))
        if args.hierarchy
        else default_hierarchy()
    )
    graph = build_graph(hierarchy, args.topology, seed=args.seed)
    save_graph(args.out, graph)
    log_event(
        "graph", "done", topology=graph.topology, nodes=len(graph.nodes), edges=len(graph.edges)
    )
    return EXIT_OK


def _load_train_config(path, mode: str, fallback_lr: float | None = None) -> TrainConfig:
    doc = {}
    if path:
        with open(_require(path, "train config"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    doc.setdefault("mode", mode)
    if fallback_lr is not None:
        doc.setdefault("lr", fallback_lr)
    return TrainConfig.from_json(doc)


def cmd_train(args) -> int:
    manifest = read_manifest(_require(args.manifest, "manifest"))
    base = Path(args.manifest).parent
    targets = np.array([record["labels"] for record in manifest], dtype=np.float64)
    out = ensure_dir(args.out)
    if args.mode == "probe":
        cfg = _load_train_config(args.config, "probe")
        features = np.stack(
            [
                _probe_features_from_container(base / record["feature_file"], args.granularity)
                for record in manifest
            ]
        )
        model, trace, info = train_probe(features, targets, cfg)
        model.save(out)
        _write_trace(out, trace, info)
        log_event("train", "done", mode="probe", f1=trace[-1]["f1"] if trace else None)
        return EXIT_OK
    cfg = _load_train_config(args.config, "gat", fallback_lr=5e-5)
    graph = load_graph(_require(args.graph, "graph"))
    samples = [load_pooled(base / record["feature_file"]) for record in manifest]
    fine_set, coarse_set, _ = samples[0]
    c_total = fine_set.fused.shape[1]
    c_last = samples[0][2].channels
    gat_doc = {}
    if args.gat_config:
        with open(_require(args.gat_config, "gat config"), "r", encoding="utf-8") as fh:
            gat_doc = json.load(fh)
    gat_config = GatConfig(
        c_total=c_total,
        c_last=c_last,
        **{k: tuple(v) if k == "mlp_hidden" else v for k, v in gat_doc.items()},
    )
    clf, trace, info = train_gat_classifier(samples, targets, graph, gat_config, cfg)
    clf.save(out)
    _write_trace(out, trace, info)
    log_event("train", "done", mode="gat", f1=trace[-1]["f1"] if trace else None)
    return EXIT_OK


def _probe_features_from_container(path, granularity: str) -> np.ndarray:
    from .heads import build_probe_features

    fine_set, coarse_set, grid = load_pooled(path)
    return build_probe_features(fine_set, coarse_set, grid, granularity=granularity)


def _write_trace(out: Path, trace: list[dict], info: dict) -> None:
    with open(out / "trace.json", "w", encoding="utf-8") as fh:
        json.dump({"trace": trace, "info": info}, fh, indent=2)


def cmd_infer(args) -> int:
    from .gat import GatModel

    graph = load_graph(_require(args.graph, "graph"))
    fine_set, coarse_set, grid = load_pooled(_require(args.feats, "pooled features"))
    model = GatModel.load(_require(args.model, "model checkpoint"))
    fwd = gat_forward(graph, fine_set, coarse_set, grid, model)
    save_token_export(args.out, export_tokens(fwd))
    log_event("infer", "done", tokens=len(fwd.token_ids), out=args.out)
    return EXIT_OK


def _read_jsonl(path) -> dict[str, dict]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            out[str(record["id"])] = record
    return out


def cmd_eval(args) -> int:
    preds = _read_jsonl(_require(args.pred, "predictions"))
    refs = _read_jsonl(_require(args.ref, "references"))
    shared = sorted(set(preds) & set(refs))
    if not shared:
        raise ValidationError("predictions and references share no ids")
    which = [m.strip() for m in args.metrics.split(",") if m.strip()]
    report: dict = {}
    if "ce" in which:
        pred_rows = [preds[i]["labels"] for i in shared if "labels" in preds[i]]
        ref_rows = [refs[i]["labels"] for i in shared if "labels" in refs[i]]
        if pred_rows and len(pred_rows) == len(ref_rows):
            scores = macro_prf1(np.array(pred_rows), np.array(ref_rows))
            report["ce"] = {
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
            }
        else:
            raise ValidationError("ce metrics need 'labels' in every shared record")
    if "nlg" in which:
        cands = [tokenize(preds[i].get("text", "")) for i in shared]
        golds = [tokenize(refs[i].get("text", "")) for i in shared]
        bleu = bleu_n(cands, golds)
        report["nlg"] = {
            **{f"bleu_{k}": b for k, b in zip(range(1, 5), bleu)},
            "rouge_l": rouge_l(cands, golds),
        }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    log_event("eval", "done", metrics=which, samples=len(shared))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = PipelineConfig.load(args.config)
    run_pipeline(cfg, out_dir=args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ct-graph",
        description="Mask-pooled feature pyramids and hierarchical graph attention, desk scale.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap worker threads (also honors CT_GRAPH_THREADS)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom volumes, masks, and labels")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="run the synthetic encoder over a volume")
    p.add_argument("--preset", required=True)
    p.add_argument("--presets", default=None, help="extra preset registry JSON")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("pool", help="mask-guided pooling over a pyramid")
    p.add_argument("--pyramid", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--hierarchy", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("graph", help="build the region graph")
    p.add_argument("--hierarchy", default=None)
    p.add_argument(
        "--topology", default="hierarchical", choices=["hierarchical", "random", "single"]
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train the probe or the graph classifier")
    p.add_argument("--mode", required=True, choices=["probe", "gat"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="train config JSON")
    p.add_argument("--graph", default=None, help="graph JSON (gat mode)")
    p.add_argument("--gat-config", default=None, help="gat dimensions JSON (gat mode)")
    p.add_argument("--granularity", default="fine", help="probe feature granularity")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="export node tokens from pooled features")
    p.add_argument("--graph", required=True)
    p.add_argument("--feats", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="ce")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads or os.environ.get("CT_GRAPH_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(threads))
    try:
        code = args.func(args)
    except (ConfigError, ValidationError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CtGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return code


if __name__ == "__main__":
    sys.exit(main())
