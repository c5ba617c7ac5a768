"""Hierarchical graph attention over the anatomy graph.

Stage 1 updates each coarse node from its fine children plus a self-loop;
stage 2 updates the global node from the coarse nodes (again with a
self-loop) and adds a skip connection back to the original global
embedding. Node features are layer-normalized before each attention stage,
per-head attention scores are LeakyReLU of a shared attention vector
applied to concatenated projections, and head outputs are concatenated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import ensure_dir, load_tensor, save_tensor
from .errors import ShapeError, ValidationError
from .graph import (
    LEVEL_COARSE,
    LEVEL_FINE,
    TOPOLOGY_SINGLE,
    RegionGraph,
)
from .tensor import (
    Tensor,
    add,
    concat,
    gather_rows,
    layer_norm,
    leaky_relu,
    matmul,
    mlp_forward,
    reshape,
    softmax,
)


@dataclass(frozen=True)
class GatConfig:
    c_total: int
    c_last: int
    d_h: int = 256
    n_heads: int = 4
    slope: float = 0.2
    mlp_hidden: tuple[int, ...] = ()
    export_dim: int = 64
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.d_h % self.n_heads:
            raise ValidationError(
                f"d_h ({self.d_h}) must be divisible by n_heads ({self.n_heads})"
            )
        for name in ("c_total", "c_last", "d_h", "n_heads", "export_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")

    @property
    def d_head(self) -> int:
        return self.d_h // self.n_heads

    @property
    def global_in(self) -> int:
        return 32 * self.c_last

    def to_json(self) -> dict:
        return {
            "c_total": self.c_total,
            "c_last": self.c_last,
            "d_h": self.d_h,
            "n_heads": self.n_heads,
            "slope": self.slope,
            "mlp_hidden": list(self.mlp_hidden),
            "export_dim": self.export_dim,
            "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GatConfig":
        return cls(
            c_total=int(doc["c_total"]),
            c_last=int(doc["c_last"]),
            d_h=int(doc["d_h"]),
            n_heads=int(doc["n_heads"]),
            slope=float(doc["slope"]),
            mlp_hidden=tuple(int(x) for x in doc.get("mlp_hidden", ())),
            export_dim=int(doc["export_dim"]),
            ln_eps=float(doc.get("ln_eps", 1e-6)),
        )


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return std * rng.standard_normal((fan_in, fan_out))


def _mlp_param_names(prefix: str, dims: list[int]):
    for i in range(len(dims) - 1):
        yield f"{prefix}.{i}.w", (dims[i], dims[i + 1])
        yield f"{prefix}.{i}.b", (dims[i + 1],)


class GatModel:
    """Node MLPs, per-head attention parameters, LayerNorms, output projection."""

    def __init__(self, config: GatConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def param_shapes(cls, config: GatConfig) -> dict[str, tuple[int, ...]]:
        hidden = list(config.mlp_hidden)
        shapes: dict[str, tuple[int, ...]] = {}
        for prefix, in_dim in (
            ("fine_mlp", config.c_total),
            ("coarse_mlp", config.c_total),
            ("global_mlp", config.global_in),
        ):
            dims = [in_dim] + hidden + [config.d_h]
            shapes.update(dict(_mlp_param_names(prefix, dims)))
        for stage in ("stage1", "stage2"):
            for h in range(config.n_heads):
                shapes[f"{stage}.head{h}.w"] = (config.d_h, config.d_head)
                shapes[f"{stage}.head{h}.a"] = (2 * config.d_head, 1)
            shapes[f"{stage}.ln.gamma"] = (config.d_h,)
            shapes[f"{stage}.ln.beta"] = (config.d_h,)
        shapes["out.w"] = (config.d_h, config.export_dim)
        shapes["out.b"] = (config.export_dim,)
        return shapes

    @classmethod
    def init(cls, config: GatConfig, seed: int = 0) -> "GatModel":
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        for name, shape in cls.param_shapes(config).items():
            if name.endswith(".b") or name.endswith(".beta"):
                data = np.zeros(shape)
            elif name.endswith(".gamma"):
                data = np.ones(shape)
            elif len(shape) == 2:
                data = _glorot(rng, shape[0], shape[1])
            else:
                data = rng.standard_normal(shape) * 0.1
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def mlp_layers(self, prefix: str) -> list[tuple[Tensor, Tensor]]:
        layers = []
        i = 0
        while f"{prefix}.{i}.w" in self.params:
            layers.append((self.params[f"{prefix}.{i}.w"], self.params[f"{prefix}.{i}.b"]))
            i += 1
        return layers

    def heads(self, stage: str) -> list[tuple[Tensor, Tensor]]:
        return [
            (self.params[f"{stage}.head{h}.w"], self.params[f"{stage}.head{h}.a"])
            for h in range(self.config.n_heads)
        ]

    def save(self, directory) -> Path:
        out = ensure_dir(directory)
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(self.config.to_json(), fh, indent=2)
        for name, tensor in self.params.items():
            save_tensor(out / (name + ".bin"), tensor.data, name=name)
        return out

    @classmethod
    def load(cls, directory) -> "GatModel":
        directory = Path(directory)
        with open(directory / "config.json", "r", encoding="utf-8") as fh:
            config = GatConfig.from_json(json.load(fh))
        params = {}
        for name, shape in cls.param_shapes(config).items():
            array, _ = load_tensor(directory / (name + ".bin"))
            if tuple(array.shape) != tuple(shape):
                raise ValidationError(
                    f"checkpoint parameter '{name}' has shape {array.shape}, expected {shape}"
                )
            params[name] = Tensor(array, requires_grad=True)
        return cls(config, params)


@dataclass
class GraphActivation:
    """Embeddings, updated features, and per-(node, head) attention tables."""

    h_fine: Tensor
    h_coarse: Tensor | None
    h_global: Tensor
    h_coarse_updated: Tensor | None
    h_global_updated: Tensor
    alphas: dict[int, dict] = field(default_factory=dict)


@dataclass
class GatForward:
    tokens: Tensor  # (n_tokens, export_dim)
    token_ids: list[int]
    activation: GraphActivation


def embed_nodes(model: GatModel, fine_fused: Tensor, coarse_fused: Tensor | None, grid_flat: Tensor):
    """MLP embeddings for every node; all rows come out with width d_h."""
    cfg = model.config
    if fine_fused.shape[1] != cfg.c_total:
        raise ShapeError(
            f"fine features have width {fine_fused.shape[1]}, config expects {cfg.c_total}"
        )
    if grid_flat.shape[1] != cfg.global_in:
        raise ShapeError(
            f"global grid flattens to {grid_flat.shape[1]}, config expects {cfg.global_in}"
        )
    h_f = mlp_forward(fine_fused, model.mlp_layers("fine_mlp"), cfg.slope)
    h_c = None
    if coarse_fused is not None:
        h_c = mlp_forward(coarse_fused, model.mlp_layers("coarse_mlp"), cfg.slope)
    h_g = mlp_forward(grid_flat, model.mlp_layers("global_mlp"), cfg.slope)
    return h_f, h_c, h_g


def _attend_group(members_h: Tensor, center_row: Tensor, heads, slope: float):
    """Multi-head attention of one center over its group (center included last).

    members_h: (g, d_h) normalized member features, the self-loop row last.
    center_row: (1, d_h) normalized center features.
    Returns (updated (1, d_h), alpha (n_heads, g)).
    """
    g = members_h.shape[0]
    ones_col = Tensor(np.ones((g, 1)))
    outputs = []
    alphas = np.empty((len(heads), g))
    for hi, (w, a) in enumerate(heads):
        proj_members = matmul(members_h, w)  # (g, d_head)
        proj_center = matmul(center_row, w)  # (1, d_head)
        tiled_center = matmul(ones_col, proj_center)  # (g, d_head)
        scores = matmul(concat([proj_members, tiled_center], axis=1), a)  # (g, 1)
        alpha = softmax(leaky_relu(scores, slope), axis=0)
        alphas[hi] = alpha.data.ravel()
        outputs.append(matmul(reshape(alpha, (1, g)), proj_members))  # (1, d_head)
    return concat(outputs, axis=1), alphas


def _stage(
    center_ids,
    members_lookup,
    center_h: Tensor,
    member_h: Tensor,
    member_ids: list[int],
    model: GatModel,
    stage: str,
):
    """Run one attention stage for every center; rows follow center_ids order."""
    cfg = model.config
    gamma = model.params[f"{stage}.ln.gamma"]
    beta = model.params[f"{stage}.ln.beta"]
    heads = model.heads(stage)
    norm_members = layer_norm(member_h, gamma, beta, cfg.ln_eps)
    norm_centers = layer_norm(center_h, gamma, beta, cfg.ln_eps)
    slot_of = {node_id: i for i, node_id in enumerate(member_ids)}
    rows, alphas = [], {}
    for ci, center_id in enumerate(center_ids):
        group_ids = members_lookup(center_id)
        slots = [slot_of[g] for g in group_ids]
        center_row = gather_rows(norm_centers, [ci])
        if slots:
            group_rows = concat([gather_rows(norm_members, slots), center_row], axis=0)
        else:
            group_rows = center_row
        updated, alpha = _attend_group(group_rows, center_row, heads, cfg.slope)
        rows.append(updated)
        alphas[center_id] = {"members": list(group_ids) + [center_id], "alpha": alpha}
    return concat(rows, axis=0), alphas


def attend_fine_to_coarse(
    graph: RegionGraph, h_fine: Tensor, h_coarse: Tensor, model: GatModel, fine_valid=None
):
    """Stage-1 update of every coarse node; childless nodes keep only the self-loop."""
    fine_ids = graph.ids_at(LEVEL_FINE)
    coarse_ids = graph.ids_at(LEVEL_COARSE)
    if fine_valid is None:
        fine_valid = np.ones(len(fine_ids), dtype=bool)
    valid_of = dict(zip(fine_ids, fine_valid))

    def members(coarse_id):
        return [f for f in graph.children_of(coarse_id) if valid_of.get(f, False)]

    return _stage(coarse_ids, members, h_coarse, h_fine, fine_ids, model, "stage1")


def attend_coarse_to_global(
    graph: RegionGraph, h_coarse_updated: Tensor, h_global: Tensor, model: GatModel, coarse_valid=None
):
    """Stage-2 update of the global node plus the identity skip connection."""
    coarse_ids = graph.ids_at(LEVEL_COARSE)
    if coarse_valid is None:
        coarse_valid = np.ones(len(coarse_ids), dtype=bool)
    valid_of = dict(zip(coarse_ids, coarse_valid))

    def members(_):
        return [c for c in coarse_ids if valid_of.get(c, False)]

    updated, alphas = _stage(
        [graph.global_id], members, h_global, h_coarse_updated, coarse_ids, model, "stage2"
    )
    return add(updated, h_global), alphas


def _attend_fine_to_global(graph: RegionGraph, h_fine: Tensor, h_global: Tensor, model: GatModel, fine_valid=None):
    # single-level ablation: the global update attends the fine nodes directly,
    # reusing the stage-2 parameters (it is the global-update stage)
    fine_ids = graph.ids_at(LEVEL_FINE)
    if fine_valid is None:
        fine_valid = np.ones(len(fine_ids), dtype=bool)
    valid_of = dict(zip(fine_ids, fine_valid))

    def members(_):
        return [f for f in fine_ids if valid_of.get(f, False)]

    updated, alphas = _stage(
        [graph.global_id], members, h_global, h_fine, fine_ids, model, "stage2"
    )
    return add(updated, h_global), alphas


def forward(graph: RegionGraph, fine_set, coarse_set, grid, model: GatModel) -> GatForward:
    """Full pass: embed, attend per topology, project export tokens.

    Tokens are ordered global, then coarse by id, then fine by id. Fine
    tokens carry the pre-normalization embeddings.
    """
    single_level = graph.topology == TOPOLOGY_SINGLE
    coarse_fused = None if single_level else coarse_set.fused
    h_f, h_c, h_g = embed_nodes(model, fine_set.fused, coarse_fused, grid.flat())

    alphas: dict[str, dict] = {}
    if single_level:
        h_g_prime, a2 = _attend_fine_to_global(graph, h_f, h_g, model, fine_set.valid)
        h_c_prime = None
        alphas["global"] = a2
        rows = [h_g_prime, h_f]
        token_ids = [graph.global_id] + fine_set.region_ids
    else:
        h_c_prime, a1 = attend_fine_to_coarse(graph, h_f, h_c, model, fine_set.valid)
        h_g_prime, a2 = attend_coarse_to_global(
            graph, h_c_prime, h_g, model, coarse_set.valid
        )
        alphas["coarse"] = a1
        alphas["global"] = a2
        rows = [h_g_prime, h_c_prime, h_f]
        token_ids = [graph.global_id] + coarse_set.region_ids + fine_set.region_ids

    stacked = concat(rows, axis=0)
    tokens = add(matmul(stacked, model.params["out.w"]), model.params["out.b"])
    activation = GraphActivation(
        h_fine=h_f,
        h_coarse=h_c,
        h_global=h_g,
        h_coarse_updated=h_c_prime,
        h_global_updated=h_g_prime,
        alphas=alphas,
    )
    return GatForward(tokens=tokens, token_ids=token_ids, activation=activation)
