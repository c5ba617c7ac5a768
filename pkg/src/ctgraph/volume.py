"""Volumes, multi-label masks, nearest-neighbor resizing, and synthetic phantoms.

Index order is fixed across the whole package: a volume of extents
(H, W, D) is stored C-contiguously with the depth index t running fastest,
i.e. flat offset = (i * W + j) * D + t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .container import load_tensor, save_tensor
from .errors import FormatError, ValidationError


@dataclass(frozen=True)
class Volume3D:
    """A real-valued scan of extents (H, W, D)."""

    voxels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.voxels, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(f"volume must be 3-d with positive extents, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("volume contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class LabelMask3D:
    """Integer labels in {0..num_labels}; 0 is background."""

    labels: np.ndarray
    num_labels: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(f"mask must be 3-d with positive extents, got {arr.shape}")
        if self.num_labels < 1:
            raise ValidationError("num_labels must be >= 1")
        if arr.min() < 0 or arr.max() > self.num_labels:
            raise ValidationError(
                f"mask labels must lie in [0, {self.num_labels}], "
                f"found range [{arr.min()}, {arr.max()}]"
            )
        arr = np.ascontiguousarray(arr.astype(np.int32))
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


def _nearest_indices(src: int, tgt: int) -> np.ndarray:
    # voxel-center convention: src index = floor((tgt index + 0.5) * src / tgt)
    scale = src / tgt
    idx = np.floor((np.arange(tgt) + 0.5) * scale).astype(np.intp)
    return np.clip(idx, 0, src - 1)


def resize_mask_nearest(mask: LabelMask3D, target_shape: tuple[int, int, int]) -> LabelMask3D:
    """Nearest-neighbor resampling; never introduces new labels."""
    th, tw, td = target_shape
    if min(target_shape) < 1:
        raise ValidationError(f"target extents must be positive, got {target_shape}")
    sh, sw, sd = mask.shape
    ih = _nearest_indices(sh, th)
    iw = _nearest_indices(sw, tw)
    it = _nearest_indices(sd, td)
    resized = mask.labels[np.ix_(ih, iw, it)]
    return LabelMask3D(resized, mask.num_labels)


# phantom generation ---------------------------------------------------------


@dataclass(frozen=True)
class RegionSpec:
    label: int
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity: float


@dataclass(frozen=True)
class PathologySpec:
    name: str
    host_label: int
    delta: float
    prevalence: float
    radius: float = 2.0


@dataclass(frozen=True)
class PhantomSpec:
    """Layout for synthetic (volume, mask, targets) triples.

    Regions are painted in order; a later region overwrites earlier voxels.
    intensity_jitter shifts every region's base intensity by a per-sample
    Gaussian draw (anatomy variation between patients). Each pathology, when
    drawn positive, adds an intensity blob strictly inside its host region.
    """

    shape: tuple[int, int, int]
    regions: tuple[RegionSpec, ...]
    pathologies: tuple[PathologySpec, ...] = ()
    seed: int = 0
    noise_sigma: float = 0.0
    intensity_jitter: float = 0.0

    def __post_init__(self):
        labels = [r.label for r in self.regions]
        if len(set(labels)) != len(labels):
            raise ValidationError("region labels must be unique")
        if any(l < 1 for l in labels):
            raise ValidationError("region labels must be >= 1 (0 is background)")
        for p in self.pathologies:
            if not 0.0 <= p.prevalence <= 1.0:
                raise ValidationError(f"pathology '{p.name}': prevalence must lie in [0, 1]")
            if p.host_label not in labels:
                raise ValidationError(f"pathology '{p.name}': unknown host label {p.host_label}")

    @property
    def num_labels(self) -> int:
        return max(r.label for r in self.regions)

    def with_seed(self, seed: int) -> "PhantomSpec":
        return replace(self, seed=seed)


def _ellipsoid(shape, center, radii) -> np.ndarray:
    gi, gj, gt = np.ogrid[: shape[0], : shape[1], : shape[2]]
    ci, cj, ct = center
    ri, rj, rt = radii
    return ((gi - ci) / ri) ** 2 + ((gj - cj) / rj) ** 2 + ((gt - ct) / rt) ** 2 <= 1.0


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3D, LabelMask3D, np.ndarray]:
    """Deterministic per spec.seed; returns (volume, mask, binary target vector)."""
    shape = tuple(spec.shape)
    vol = np.zeros(shape, dtype=np.float64)
    labels = np.zeros(shape, dtype=np.int32)

    for region in spec.regions:
        for axis in range(3):
            lo = region.center[axis] - region.radii[axis]
            hi = region.center[axis] + region.radii[axis]
            if lo < -0.5 or hi > shape[axis] - 0.5:
                raise ValidationError(
                    f"region label {region.label} extends outside extents {shape} on axis {axis}"
                )
        inside = _ellipsoid(shape, region.center, region.radii)
        vol[inside] = region.intensity
        labels[inside] = region.label

    counts = np.bincount(labels.ravel(), minlength=spec.num_labels + 1)
    for region in spec.regions:
        if counts[region.label] == 0:
            raise ValidationError(
                f"region label {region.label} has no voxels after painting; "
                "check for overlapping regions"
            )

    rng = np.random.default_rng(spec.seed)
    if spec.intensity_jitter > 0:
        shifts = rng.normal(0.0, spec.intensity_jitter, size=len(spec.regions))
        for region, shift in zip(spec.regions, shifts):
            vol[labels == region.label] += shift

    targets = (rng.random(len(spec.pathologies)) < np.array(
        [p.prevalence for p in spec.pathologies]
    )).astype(np.int32) if spec.pathologies else np.zeros(0, dtype=np.int32)

    for positive, patho in zip(targets, spec.pathologies):
        if not positive:
            continue
        host_voxels = np.argwhere(labels == patho.host_label)
        site = host_voxels[rng.integers(len(host_voxels))]
        blob = _ellipsoid(shape, tuple(site), (patho.radius,) * 3)
        blob &= labels == patho.host_label
        vol[blob] += patho.delta

    if spec.noise_sigma > 0:
        vol += rng.normal(0.0, spec.noise_sigma, size=shape)

    return Volume3D(vol), LabelMask3D(labels, spec.num_labels), targets


# JSON and container I/O ------------------------------------------------------


def phantom_spec_to_json(spec: PhantomSpec) -> dict:
    return {
        "shape": list(spec.shape),
        "seed": spec.seed,
        "noise_sigma": spec.noise_sigma,
        "intensity_jitter": spec.intensity_jitter,
        "regions": [
            {
                "label": r.label,
                "center": list(r.center),
                "radii": list(r.radii),
                "intensity": r.intensity,
            }
            for r in spec.regions
        ],
        "pathologies": [
            {
                "name": p.name,
                "host_label": p.host_label,
                "delta": p.delta,
                "prevalence": p.prevalence,
                "radius": p.radius,
            }
            for p in spec.pathologies
        ],
    }


def phantom_spec_from_json(doc: dict) -> PhantomSpec:
    try:
        regions = tuple(
            RegionSpec(
                label=int(r["label"]),
                center=tuple(float(x) for x in r["center"]),
                radii=tuple(float(x) for x in r["radii"]),
                intensity=float(r["intensity"]),
            )
            for r in doc["regions"]
        )
        pathologies = tuple(
            PathologySpec(
                name=str(p["name"]),
                host_label=int(p["host_label"]),
                delta=float(p["delta"]),
                prevalence=float(p["prevalence"]),
                radius=float(p.get("radius", 2.0)),
            )
            for p in doc.get("pathologies", ())
        )
        return PhantomSpec(
            shape=tuple(int(x) for x in doc["shape"]),
            regions=regions,
            pathologies=pathologies,
            seed=int(doc.get("seed", 0)),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            intensity_jitter=float(doc.get("intensity_jitter", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed phantom spec: {exc}") from exc


def load_phantom_spec(path) -> PhantomSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return phantom_spec_from_json(json.load(fh))


def save_phantom_spec(path, spec: PhantomSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(phantom_spec_to_json(spec), fh, indent=2)


def save_volume(path, volume: Volume3D) -> None:
    save_tensor(path, volume.voxels, name="volume")


def load_volume(path) -> Volume3D:
    array, header = load_tensor(path)
    if array.ndim != 3:
        raise FormatError(f"{path}: volume container must be 3-d, got shape {array.shape}")
    return Volume3D(array.astype(np.float64))


def save_mask(path, mask: LabelMask3D) -> None:
    save_tensor(path, mask.labels, name="mask", meta={"num_labels": mask.num_labels})


def load_mask(path) -> LabelMask3D:
    array, header = load_tensor(path)
    if array.ndim != 3:
        raise FormatError(f"{path}: mask container must be 3-d, got shape {array.shape}")
    meta = header.get("meta") or {}
    num_labels = int(meta.get("num_labels", array.max() if array.size else 1))
    return LabelMask3D(array, max(num_labels, 1))
