"""Task heads: linear probing, a graph classifier, and token export.

The probe is a single affine layer trained with per-label binary
cross-entropy on frozen features; the graph classifier puts the same head
on the updated global embedding and backpropagates through both attention
stages. Token export packages the projected node tokens together with the
generation prompt for a downstream language model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .container import ensure_dir, load_records, load_tensor, save_tensor, save_tensors
from .errors import ConfigError, ShapeError, ValidationError
from .gat import GatConfig, GatForward, GatModel, forward as gat_forward
from .graph import RegionGraph
from .metrics import MacroScores, macro_prf1
from .pooling import GlobalFeatureGrid, RegionFeatureSet
from .tensor import AdamW, Tensor, add, bce_with_logits, concat, matmul, _sigmoid_np

DEFAULT_PROMPT = (
    "Generate a medical report based on the visual information of the given CT image."
)

GRANULARITIES = ("global", "coarse", "fine", "fused")


@dataclass
class TrainConfig:
    mode: str = "probe"
    batch_size: int = 32
    epochs: int = 40
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    threshold: float = 0.5
    val_fraction: float = 0.1

    @classmethod
    def for_gat(cls, **overrides) -> "TrainConfig":
        cfg = cls(mode="gat", lr=5e-5, **{k: v for k, v in overrides.items() if k != "lr"})
        if "lr" in overrides:
            cfg = replace(cfg, lr=overrides["lr"])
        return cfg

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class ProbeModel:
    """One affine layer; frozen-feature linear probing."""

    weight: Tensor
    bias: Tensor
    threshold: float = 0.5

    @classmethod
    def zeros(cls, in_dim: int, n_classes: int, threshold: float = 0.5) -> "ProbeModel":
        return cls(
            weight=Tensor(np.zeros((in_dim, n_classes)), requires_grad=True),
            bias=Tensor(np.zeros(n_classes), requires_grad=True),
            threshold=threshold,
        )

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.data + self.bias.data

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (_sigmoid_np(self.logits(features)) >= self.threshold).astype(np.int32)

    def save(self, directory) -> Path:
        out = ensure_dir(directory)
        save_tensors(
            out / "probe.bin",
            {"weight": self.weight.data, "bias": self.bias.data},
            meta={"weight": {"threshold": self.threshold}},
        )
        return out

    @classmethod
    def load(cls, directory) -> "ProbeModel":
        records = load_records(Path(directory) / "probe.bin")
        arrays = {name: arr for name, arr, _ in records}
        threshold = records[0][2].get("meta", {}).get("threshold", 0.5)
        return cls(
            weight=Tensor(arrays["weight"], requires_grad=True),
            bias=Tensor(arrays["bias"], requires_grad=True),
            threshold=float(threshold),
        )


def build_probe_features(
    fine_set: RegionFeatureSet,
    coarse_set: RegionFeatureSet,
    grid: GlobalFeatureGrid,
    granularity: str = "fine",
    layer: int | None = None,
    include_global: bool = False,
) -> np.ndarray:
    """Flatten pooled features into one probe input vector.

    granularity picks which node level feeds the probe; layer=k restricts it
    to a single encoder layer (fine plus coarse rows at that layer, with the
    flattened global grid appended only when include_global is set).
    """
    if granularity not in GRANULARITIES:
        raise ValidationError(f"unknown granularity '{granularity}' (known: {GRANULARITIES})")
    if layer is not None:
        if layer >= len(fine_set.per_layer):
            raise ValidationError(
                f"layer {layer} out of range for {len(fine_set.per_layer)} pyramid layers"
            )
        parts = [fine_set.per_layer[layer].data.ravel(), coarse_set.per_layer[layer].data.ravel()]
        if include_global:
            parts.append(grid.grid.data.ravel())
        return np.concatenate(parts)
    if granularity == "global":
        return grid.grid.data.ravel().copy()
    if granularity == "coarse":
        return coarse_set.fused.data.ravel().copy()
    if granularity == "fine":
        return fine_set.fused.data.ravel().copy()
    parts = [fine_set.fused.data.ravel(), coarse_set.fused.data.ravel()]
    if include_global:
        parts.append(grid.grid.data.ravel())
    return np.concatenate(parts)


def split_train_val(n: int, val_fraction: float, rng: np.random.Generator):
    """Deterministic shuffled split; validation takes the trailing fraction."""
    perm = rng.permutation(n)
    n_val = 0
    if val_fraction > 0 and n > 1:
        n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    return perm[: n - n_val], perm[n - n_val :]


def train_probe(features: np.ndarray, targets: np.ndarray, cfg: TrainConfig):
    """Train a linear probe; returns (model, per-epoch metric trace, info).

    Deterministic for a fixed cfg.seed. Classes with no positive validation
    sample keep the 0-convention F1 and are listed in info["degenerate_classes"].
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2 or targets.ndim != 2 or len(features) != len(targets):
        raise ShapeError(
            f"expected aligned 2-d features/targets, got {features.shape} and {targets.shape}"
        )
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = split_train_val(len(features), cfg.val_fraction, rng)
    model = ProbeModel.zeros(features.shape[1], targets.shape[1], cfg.threshold)
    optimizer = AdamW(
        [model.weight, model.bias], lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    trace: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx) if len(train_idx) else train_idx
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = Tensor(features[batch])
            logits = add(matmul(x, model.weight), model.bias)
            loss = bce_with_logits(logits, targets[batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        scores = _probe_val_scores(model, features, targets, val_idx)
        trace.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / max(n_batches, 1),
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
            }
        )
    final = _probe_val_scores(model, features, targets, val_idx)
    info = {
        "degenerate_classes": final.degenerate_classes,
        "train_size": int(len(train_idx)),
        "val_size": int(len(val_idx)),
    }
    return model, trace, info


def _probe_val_scores(model: ProbeModel, features, targets, val_idx) -> MacroScores:
    if len(val_idx) == 0:
        val_idx = np.arange(len(features))
    pred = model.predict(features[val_idx])
    return macro_prf1(pred, targets[val_idx].astype(np.int32))


@dataclass
class GatClassifier:
    """Graph attention model plus an affine head on the updated global token."""

    gat: GatModel
    head_weight: Tensor
    head_bias: Tensor
    threshold: float = 0.5

    def parameters(self) -> list[Tensor]:
        return self.gat.parameters() + [self.head_weight, self.head_bias]

    def logits(self, graph: RegionGraph, sample) -> Tensor:
        fine_set, coarse_set, grid = sample
        fwd = gat_forward(graph, fine_set, coarse_set, grid, self.gat)
        return add(
            matmul(fwd.activation.h_global_updated, self.head_weight), self.head_bias
        )

    def predict(self, graph: RegionGraph, sample) -> np.ndarray:
        probs = _sigmoid_np(self.logits(graph, sample).data)
        return (probs >= self.threshold).astype(np.int32).ravel()

    def save(self, directory) -> Path:
        out = self.gat.save(directory)
        save_tensors(
            out / "head.bin",
            {"weight": self.head_weight.data, "bias": self.head_bias.data},
            meta={"weight": {"threshold": self.threshold}},
        )
        return out

    @classmethod
    def load(cls, directory) -> "GatClassifier":
        gat = GatModel.load(directory)
        records = load_records(Path(directory) / "head.bin")
        arrays = {name: arr for name, arr, _ in records}
        threshold = records[0][2].get("meta", {}).get("threshold", 0.5)
        return cls(
            gat=gat,
            head_weight=Tensor(arrays["weight"], requires_grad=True),
            head_bias=Tensor(arrays["bias"], requires_grad=True),
            threshold=float(threshold),
        )


def init_gat_classifier(
    gat_config: GatConfig, n_classes: int, seed: int = 0, threshold: float = 0.5
) -> GatClassifier:
    gat = GatModel.init(gat_config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    head_w = rng.standard_normal((gat_config.d_h, n_classes)) * np.sqrt(
        2.0 / (gat_config.d_h + n_classes)
    )
    return GatClassifier(
        gat=gat,
        head_weight=Tensor(head_w, requires_grad=True),
        head_bias=Tensor(np.zeros(n_classes), requires_grad=True),
        threshold=threshold,
    )


def train_gat_classifier(
    samples: list,
    targets: np.ndarray,
    graph: RegionGraph,
    gat_config: GatConfig,
    cfg: TrainConfig,
):
    """Train the graph classifier end to end through both attention stages.

    samples: list of (fine_set, coarse_set, grid) pooled triples sharing one
    topology. Returns (classifier, per-epoch trace, info).
    """
    targets = np.asarray(targets, dtype=np.float64)
    if len(samples) != len(targets):
        raise ShapeError(f"{len(samples)} samples but {len(targets)} target rows")
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = split_train_val(len(samples), cfg.val_fraction, rng)
    clf = init_gat_classifier(
        gat_config, targets.shape[1], seed=cfg.seed, threshold=cfg.threshold
    )
    optimizer = AdamW(clf.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx) if len(train_idx) else train_idx
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            logits = concat([clf.logits(graph, samples[i]) for i in batch], axis=0)
            loss = bce_with_logits(logits, targets[batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
            n_batches += 1
        scores = _gat_val_scores(clf, graph, samples, targets, val_idx)
        trace.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / max(n_batches, 1),
                "precision": scores.precision,
                "recall": scores.recall,
                "f1": scores.f1,
            }
        )
    final = _gat_val_scores(clf, graph, samples, targets, val_idx)
    info = {
        "degenerate_classes": final.degenerate_classes,
        "train_size": int(len(train_idx)),
        "val_size": int(len(val_idx)),
    }
    return clf, trace, info


def _gat_val_scores(clf, graph, samples, targets, val_idx) -> MacroScores:
    if len(val_idx) == 0:
        val_idx = np.arange(len(samples))
    pred = np.stack([clf.predict(graph, samples[i]) for i in val_idx])
    return macro_prf1(pred, targets[val_idx].astype(np.int32))


# token export ----------------------------------------------------------------


@dataclass
class TokenExport:
    """Projected node tokens (global, coarse, fine order) plus the prompt."""

    tokens: np.ndarray  # (n_tokens, export_dim)
    token_ids: list[int]
    prompt: str = DEFAULT_PROMPT


def export_tokens(fwd: GatForward, prompt: str = DEFAULT_PROMPT) -> TokenExport:
    return TokenExport(
        tokens=fwd.tokens.data.copy(), token_ids=list(fwd.token_ids), prompt=prompt
    )


def save_token_export(path, export: TokenExport) -> None:
    save_tensor(
        path,
        export.tokens,
        name="tokens",
        meta={"prompt": export.prompt, "token_ids": export.token_ids},
    )


def load_token_export(path) -> TokenExport:
    array, header = load_tensor(path)
    meta = header.get("meta") or {}
    return TokenExport(
        tokens=array,
        token_ids=[int(i) for i in meta.get("token_ids", [])],
        prompt=meta.get("prompt", DEFAULT_PROMPT),
    )


# dataset manifests -----------------------------------------------------------


def write_manifest(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_manifest(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{line_no}: invalid JSONL record: {exc}") from exc
            for key in ("feature_file", "labels"):
                if key not in record:
                    raise ConfigError(f"{path}:{line_no}: record misses '{key}'")
            records.append(record)
    if not records:
        raise ConfigError(f"{path}: empty manifest")
    return records
