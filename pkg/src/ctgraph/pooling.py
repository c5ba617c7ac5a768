"""Mask-guided average pooling, layer fusion, and global adaptive pooling.

The pooling kernel scatter-accumulates per-region sums in a fixed number of
passes over the voxels (one per channel), independent of how many regions
the mask carries; a per-region rescan is used only as a test oracle.
Accumulation is always float64, even for float32 feature maps, because
region voxel counts can be large.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import load_records, save_tensors
from .errors import ShapeError, ValidationError
from .graph import AnatomyHierarchy
from .tensor import Tensor, concat, from_op, gather_rows, reshape
from .volume import LabelMask3D, resize_mask_nearest


def segment_mean(values: Tensor, segment_ids: np.ndarray, num_segments: int):
    """Mean of rows per segment id; empty segments yield zero rows.

    values: (n, C); segment_ids: (n,) ints in [0, num_segments).
    Returns (means Tensor (num_segments, C), counts (num_segments,)).
    Differentiable in values.
    """
    if values.ndim != 2:
        raise ShapeError(f"segment_mean expects (n, C) values, got shape {values.shape}")
    seg = np.asarray(segment_ids, dtype=np.intp)
    if seg.shape != (values.shape[0],):
        raise ShapeError(
            f"segment ids of shape {seg.shape} do not match {values.shape[0]} rows"
        )
    n, c = values.shape
    counts = np.bincount(seg, minlength=num_segments)
    if len(counts) > num_segments:
        raise ShapeError("segment ids exceed num_segments")
    sums = np.empty((num_segments, c), dtype=np.float64)
    data = values.data
    for ch in range(c):
        sums[:, ch] = np.bincount(
            seg, weights=data[:, ch].astype(np.float64, copy=False), minlength=num_segments
        )
    divisor = np.maximum(counts, 1)[:, None].astype(np.float64)
    means = sums / divisor

    def backward(g):
        scaled = g / divisor
        gv = scaled[seg]
        return (gv.astype(data.dtype, copy=False),)

    return from_op(means, (values,), backward), counts


def mask_pool_layer(layer: Tensor, mask: LabelMask3D, region_labels) -> tuple[Tensor, np.ndarray]:
    """Per-region channel means of one (H, W, D, C) layer.

    The mask must already be resized to this layer's extents. Regions with
    no voxels come back as zero rows with count 0.
    """
    if layer.ndim != 4:
        raise ShapeError(f"layer features must be (H, W, D, C), got {layer.shape}")
    if layer.shape[:3] != mask.shape:
        raise ShapeError(
            f"layer extents {layer.shape[:3]} do not match mask extents {mask.shape}"
        )
    labels = list(region_labels)
    n_regions = len(labels)
    # route every unlisted label (incl. background) to a trash slot past the
    # end; region labels outside the mask vocabulary simply stay empty
    lut = np.full(max([mask.num_labels] + labels) + 1, n_regions, dtype=np.intp)
    for slot, label in enumerate(labels):
        lut[label] = slot
    seg = lut[mask.labels.ravel()]
    values = reshape(layer, (-1, layer.shape[3]))
    means, counts = segment_mean(values, seg, n_regions + 1)
    return gather_rows(means, np.arange(n_regions)), counts[:n_regions]


def fuse_layers(per_layer: list[Tensor]) -> Tensor:
    """Concatenate per-layer region features along the channel axis."""
    if not per_layer or any(t is None for t in per_layer):
        raise ShapeError("layer fusion requires every layer's features to be present")
    if len(per_layer) == 1:
        return per_layer[0]
    return concat(per_layer, axis=1)


@dataclass
class RegionFeatureSet:
    """Pooled features for one node level, rows ordered by node id."""

    region_ids: list[int]
    per_layer: list[Tensor]  # each (n_regions, C_l)
    fused: Tensor  # (n_regions, sum C_l)
    counts: np.ndarray  # (n_regions, L) voxels per layer
    valid: np.ndarray  # (n_regions,) region present at full resolution

    @property
    def num_regions(self) -> int:
        return len(self.region_ids)


@dataclass
class GlobalFeatureGrid:
    """Adaptive average pooling of the final layer down to (4, 4, 2)."""

    grid: Tensor  # (gh, gw, gd, C_L)

    def flat(self) -> Tensor:
        return reshape(self.grid, (1, self.grid.size))

    @property
    def channels(self) -> int:
        return self.grid.shape[3]


def _partition(n: int, parts: int) -> list[tuple[int, int]]:
    return [(a * n // parts, (a + 1) * n // parts) for a in range(parts)]


def adaptive_avg_pool_global(layer: Tensor, target=(4, 4, 2)) -> GlobalFeatureGrid:
    """Tile the layer into a fixed grid of boxes and average each box."""
    if layer.ndim != 4:
        raise ShapeError(f"expected (H, W, D, C) features, got {layer.shape}")
    h, w, d, c = layer.shape
    th, tw, td = target
    if h < th or w < tw or d < td:
        raise ShapeError(
            f"input extents {(h, w, d)} are smaller than the target grid {target}"
        )
    hb, wb, db = _partition(h, th), _partition(w, tw), _partition(d, td)
    data = layer.data
    out = np.empty((th, tw, td, c), dtype=np.float64)
    for a, (h0, h1) in enumerate(hb):
        for b, (w0, w1) in enumerate(wb):
            for e, (d0, d1) in enumerate(db):
                out[a, b, e] = data[h0:h1, w0:w1, d0:d1].mean(axis=(0, 1, 2))

    def backward(g):
        gv = np.zeros_like(data)
        for a, (h0, h1) in enumerate(hb):
            for b, (w0, w1) in enumerate(wb):
                for e, (d0, d1) in enumerate(db):
                    size = (h1 - h0) * (w1 - w0) * (d1 - d0)
                    gv[h0:h1, w0:w1, d0:d1] += g[a, b, e] / size
        return (gv,)

    return GlobalFeatureGrid(from_op(out, (layer,), backward))


def _pool_level(pyramid, mask, labels) -> tuple[list[Tensor], np.ndarray]:
    per_layer, counts = [], []
    for layer in pyramid.layers:
        resized = resize_mask_nearest(mask, layer.extents)
        feats, cnt = mask_pool_layer(layer.data, resized, labels)
        per_layer.append(feats)
        counts.append(cnt)
    return per_layer, np.stack(counts, axis=1)


def pool_all(pyramid, mask: LabelMask3D, hierarchy: AnatomyHierarchy):
    """Pool fine regions, coarse union regions, and the global grid.

    Coarse features are pooled over the union of their member masks at every
    layer, not assembled from fine means. Regions whose label is absent from
    the mask (including labels outside its vocabulary) come back flagged
    invalid with zero features, never as an error. Returns
    (fine RegionFeatureSet, coarse RegionFeatureSet, GlobalFeatureGrid).
    """
    fine_nodes = sorted(hierarchy.fine, key=lambda n: n.id)
    fine_labels = [n.label for n in fine_nodes]
    fine_layers, fine_counts = _pool_level(pyramid, mask, fine_labels)

    coarse_nodes = sorted(hierarchy.coarse, key=lambda n: n.id)
    member_labels = {c.id: hierarchy.member_labels(c.id) for c in coarse_nodes}
    coarse_lut = np.zeros(mask.num_labels + 1, dtype=np.int32)
    # 0 stays background; coarse slot k uses temporary label k+1 in a remapped mask
    for slot, cnode in enumerate(coarse_nodes):
        for label in member_labels[cnode.id]:
            if label <= mask.num_labels:
                coarse_lut[label] = slot + 1
    union_mask = LabelMask3D(coarse_lut[mask.labels], max(len(coarse_nodes), 1))
    union_labels = [slot + 1 for slot in range(len(coarse_nodes))]
    coarse_layers, coarse_counts = _pool_level(pyramid, union_mask, union_labels)

    full_counts = np.bincount(mask.labels.ravel(), minlength=mask.num_labels + 1)
    fine_valid = np.array(
        [l <= mask.num_labels and full_counts[l] > 0 for l in fine_labels], dtype=bool
    )
    coarse_valid = np.array(
        [
            sum(full_counts[l] for l in member_labels[c.id] if l <= mask.num_labels) > 0
            for c in coarse_nodes
        ],
        dtype=bool,
    )

    fine_set = RegionFeatureSet(
        region_ids=[n.id for n in fine_nodes],
        per_layer=fine_layers,
        fused=fuse_layers(fine_layers),
        counts=fine_counts,
        valid=fine_valid,
    )
    coarse_set = RegionFeatureSet(
        region_ids=[n.id for n in coarse_nodes],
        per_layer=coarse_layers,
        fused=fuse_layers(coarse_layers),
        counts=coarse_counts,
        valid=coarse_valid,
    )
    grid = adaptive_avg_pool_global(pyramid.layers[-1].data)
    return fine_set, coarse_set, grid


# container I/O ---------------------------------------------------------------


def save_pooled(path, fine: RegionFeatureSet, coarse: RegionFeatureSet, grid: GlobalFeatureGrid) -> None:
    named: dict[str, np.ndarray] = {}
    for prefix, rset in (("fine", fine), ("coarse", coarse)):
        named[f"{prefix}_ids"] = np.asarray(rset.region_ids, dtype=np.int64)
        for i, t in enumerate(rset.per_layer):
            named[f"{prefix}_layer_{i:02d}"] = t.data
        named[f"{prefix}_counts"] = rset.counts.astype(np.int64)
        named[f"{prefix}_valid"] = rset.valid.astype(np.int32)
    named["global_grid"] = grid.grid.data
    save_tensors(path, named)


def load_pooled(path):
    arrays = {name: arr for name, arr, _ in load_records(path)}

    def build(prefix: str) -> RegionFeatureSet:
        ids = arrays[f"{prefix}_ids"].tolist()
        per_layer = []
        i = 0
        while f"{prefix}_layer_{i:02d}" in arrays:
            per_layer.append(Tensor(arrays[f"{prefix}_layer_{i:02d}"]))
            i += 1
        if not per_layer:
            raise ValidationError(f"{path}: no '{prefix}' layers found")
        return RegionFeatureSet(
            region_ids=ids,
            per_layer=per_layer,
            fused=fuse_layers(per_layer),
            counts=arrays[f"{prefix}_counts"],
            valid=arrays[f"{prefix}_valid"].astype(bool),
        )

    grid = GlobalFeatureGrid(Tensor(arrays["global_grid"]))
    return build("fine"), build("coarse"), grid
