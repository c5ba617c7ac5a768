"""Anatomical hierarchy and region-graph construction.

The default table maps 34 fine structures onto 8 coarse systems (bones,
lungs, abdomen, mediastinum, heart, esophagus, trachea, thyroid). It is a
reconstruction assembled for this artifact and fully user-overridable via
anatomy.json. Esophagus, trachea, and thyroid are childless coarse nodes
that carry their own mask label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LEVEL_FINE = "fine"
LEVEL_COARSE = "coarse"
LEVEL_GLOBAL = "global"

TOPOLOGY_HIERARCHICAL = "hierarchical"
TOPOLOGY_RANDOM = "random"
TOPOLOGY_SINGLE = "single-level"
TOPOLOGIES = (TOPOLOGY_HIERARCHICAL, TOPOLOGY_RANDOM, TOPOLOGY_SINGLE, "none")


@dataclass(frozen=True)
class FineNode:
    id: int
    name: str
    label: int
    parent: int


@dataclass(frozen=True)
class CoarseNode:
    id: int
    name: str
    label: int | None = None  # own mask label for childless systems


@dataclass(frozen=True)
class AnatomyHierarchy:
    fine: tuple[FineNode, ...]
    coarse: tuple[CoarseNode, ...]
    global_id: int

    def __post_init__(self):
        ids = [n.id for n in self.fine] + [n.id for n in self.coarse] + [self.global_id]
        if len(set(ids)) != len(ids):
            raise ValidationError("node ids must be unique across levels")
        coarse_ids = {c.id for c in self.coarse}
        for node in self.fine:
            if node.parent not in coarse_ids:
                raise ValidationError(
                    f"fine node '{node.name}' (id {node.id}) has unknown parent {node.parent}"
                )
        labels = [n.label for n in self.fine] + [
            c.label for c in self.coarse if c.label is not None
        ]
        if len(set(labels)) != len(labels):
            raise ValidationError("mask labels must be unique across nodes")

    def children_of(self, coarse_id: int) -> list[FineNode]:
        return sorted((f for f in self.fine if f.parent == coarse_id), key=lambda n: n.id)

    def member_labels(self, coarse_id: int) -> list[int]:
        """Mask labels forming the coarse node's union region."""
        labels = [f.label for f in self.children_of(coarse_id)]
        cnode = next(c for c in self.coarse if c.id == coarse_id)
        if cnode.label is not None:
            labels.append(cnode.label)
        return labels

    @property
    def num_fine(self) -> int:
        return len(self.fine)

    @property
    def num_coarse(self) -> int:
        return len(self.coarse)

    @property
    def max_label(self) -> int:
        return max(
            [f.label for f in self.fine]
            + [c.label for c in self.coarse if c.label is not None]
        )


@dataclass(frozen=True)
class GraphNode:
    id: int
    level: str


@dataclass(frozen=True)
class RegionGraph:
    """Directed two-level in-tree (or its ablation variants)."""

    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int], ...]
    topology: str

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValidationError(f"unknown topology tag '{self.topology}'")

    def ids_at(self, level: str) -> list[int]:
        return [n.id for n in self.nodes if n.level == level]

    @property
    def global_id(self) -> int:
        return self.ids_at(LEVEL_GLOBAL)[0]

    def parents(self) -> dict[int, int]:
        return {src: dst for src, dst in self.edges}

    def children_of(self, node_id: int) -> list[int]:
        return sorted(src for src, dst in self.edges if dst == node_id)


def _ordered_nodes(hierarchy: AnatomyHierarchy, include_coarse: bool = True) -> tuple[GraphNode, ...]:
    nodes = [GraphNode(f.id, LEVEL_FINE) for f in sorted(hierarchy.fine, key=lambda n: n.id)]
    if include_coarse:
        nodes += [
            GraphNode(c.id, LEVEL_COARSE) for c in sorted(hierarchy.coarse, key=lambda n: n.id)
        ]
    nodes.append(GraphNode(hierarchy.global_id, LEVEL_GLOBAL))
    return tuple(nodes)


def build_hierarchical(hierarchy: AnatomyHierarchy) -> RegionGraph:
    """Fine nodes point at their parents, coarse nodes at the global node."""
    edges = [(f.id, f.parent) for f in sorted(hierarchy.fine, key=lambda n: n.id)]
    edges += [
        (c.id, hierarchy.global_id) for c in sorted(hierarchy.coarse, key=lambda n: n.id)
    ]
    return RegionGraph(_ordered_nodes(hierarchy), tuple(edges), TOPOLOGY_HIERARCHICAL)


def build_random(hierarchy: AnatomyHierarchy, seed: int) -> RegionGraph:
    """Same node and edge counts as hierarchical, parents drawn uniformly."""
    rng = np.random.default_rng(seed)
    coarse_ids = [c.id for c in sorted(hierarchy.coarse, key=lambda n: n.id)]
    fine_ids = [f.id for f in sorted(hierarchy.fine, key=lambda n: n.id)]
    picks = rng.integers(0, len(coarse_ids), size=len(fine_ids))
    edges = [(fid, coarse_ids[k]) for fid, k in zip(fine_ids, picks)]
    edges += [(cid, hierarchy.global_id) for cid in coarse_ids]
    return RegionGraph(_ordered_nodes(hierarchy), tuple(edges), TOPOLOGY_RANDOM)


def build_single_level(hierarchy: AnatomyHierarchy) -> RegionGraph:
    """Every fine node connects straight to the global node; no coarse level."""
    edges = [
        (f.id, hierarchy.global_id) for f in sorted(hierarchy.fine, key=lambda n: n.id)
    ]
    return RegionGraph(
        _ordered_nodes(hierarchy, include_coarse=False), tuple(edges), TOPOLOGY_SINGLE
    )


def build_graph(hierarchy: AnatomyHierarchy, topology: str, seed: int = 0) -> RegionGraph:
    if topology in (TOPOLOGY_HIERARCHICAL,):
        return build_hierarchical(hierarchy)
    if topology in (TOPOLOGY_RANDOM,):
        return build_random(hierarchy, seed)
    if topology in (TOPOLOGY_SINGLE, "single"):
        return build_single_level(hierarchy)
    raise ValidationError(f"unknown topology '{topology}'")


# default table ---------------------------------------------------------------

_LUNG_LOBES = (
    "lung_upper_lobe_left",
    "lung_lower_lobe_left",
    "lung_upper_lobe_right",
    "lung_middle_lobe_right",
    "lung_lower_lobe_right",
)
_ABDOMEN = (
    "liver",
    "spleen",
    "stomach",
    "pancreas",
    "gallbladder",
    "kidney_left",
    "kidney_right",
    "adrenal_gland_left",
    "adrenal_gland_right",
    "small_bowel",
    "colon",
    "duodenum",
)
_HEART = (
    "heart_myocardium",
    "heart_atrium_left",
    "heart_atrium_right",
    "heart_ventricle_left",
    "heart_ventricle_right",
)
_MEDIASTINUM = (
    "aorta",
    "pulmonary_artery",
    "vena_cava_superior",
    "vena_cava_inferior",
    "thymus",
    "mediastinal_lymph_nodes",
)
_BONES = (
    "vertebrae",
    "ribs",
    "sternum",
    "scapulae",
    "clavicles",
    "humeri",
)


def default_hierarchy() -> AnatomyHierarchy:
    """34 fine nodes under 5 systems plus 3 childless coarse structures."""
    groups = [
        ("lungs", _LUNG_LOBES),
        ("abdomen", _ABDOMEN),
        ("heart", _HEART),
        ("mediastinum", _MEDIASTINUM),
        ("bones", _BONES),
    ]
    coarse_order = [
        "bones",
        "lungs",
        "abdomen",
        "mediastinum",
        "heart",
        "esophagus",
        "trachea",
        "thyroid",
    ]
    coarse_ids = {name: 35 + i for i, name in enumerate(coarse_order)}
    fine: list[FineNode] = []
    next_id = 1
    for group_name, members in groups:
        for member in members:
            fine.append(
                FineNode(id=next_id, name=member, label=next_id, parent=coarse_ids[group_name])
            )
            next_id += 1
    own_labels = {"esophagus": 35, "trachea": 36, "thyroid": 37}
    coarse = tuple(
        CoarseNode(id=coarse_ids[name], name=name, label=own_labels.get(name))
        for name in coarse_order
    )
    return AnatomyHierarchy(fine=tuple(fine), coarse=coarse, global_id=43)


# serialization ---------------------------------------------------------------


def hierarchy_to_json(hierarchy: AnatomyHierarchy) -> dict:
    doc = {
        "version": 1,
        "fine": [
            {"id": f.id, "name": f.name, "label": f.label, "parent": f.parent}
            for f in hierarchy.fine
        ],
        "coarse": [],
    }
    for c in hierarchy.coarse:
        entry: dict = {"id": c.id, "name": c.name}
        if c.label is not None:
            entry["label"] = c.label
        doc["coarse"].append(entry)
    return doc


def hierarchy_from_json(doc: dict) -> AnatomyHierarchy:
    try:
        fine = tuple(
            FineNode(int(f["id"]), str(f["name"]), int(f["label"]), int(f["parent"]))
            for f in doc["fine"]
        )
        coarse = tuple(
            CoarseNode(
                int(c["id"]),
                str(c["name"]),
                int(c["label"]) if "label" in c and c["label"] is not None else None,
            )
            for c in doc["coarse"]
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed hierarchy document: {exc}") from exc
    global_id = max([f.id for f in fine] + [c.id for c in coarse], default=0) + 1
    return AnatomyHierarchy(fine=fine, coarse=coarse, global_id=global_id)


def load_hierarchy(path) -> AnatomyHierarchy:
    with open(path, "r", encoding="utf-8") as fh:
        return hierarchy_from_json(json.load(fh))


def save_hierarchy(path, hierarchy: AnatomyHierarchy) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(hierarchy_to_json(hierarchy), fh, indent=2)


def graph_to_json(graph: RegionGraph) -> dict:
    return {
        "topology": graph.topology,
        "nodes": [{"id": n.id, "level": n.level} for n in graph.nodes],
        "edges": [[s, d] for s, d in graph.edges],
    }


def graph_from_json(doc: dict) -> RegionGraph:
    try:
        nodes = tuple(GraphNode(int(n["id"]), str(n["level"])) for n in doc["nodes"])
        edges = tuple((int(s), int(d)) for s, d in doc["edges"])
        return RegionGraph(nodes, edges, str(doc["topology"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed graph document: {exc}") from exc


def load_graph(path) -> RegionGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return graph_from_json(json.load(fh))


def save_graph(path, graph: RegionGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(graph), fh, indent=2)
