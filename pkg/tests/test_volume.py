"""Mask resizing oracle, phantom generation, and volume/mask round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgraph.errors import FormatError, ValidationError
from ctgraph.volume import (
    LabelMask3D,
    PathologySpec,
    PhantomSpec,
    RegionSpec,
    Volume3D,
    generate_phantom,
    load_mask,
    load_volume,
    phantom_spec_from_json,
    phantom_spec_to_json,
    resize_mask_nearest,
    save_mask,
    save_volume,
)


def nearest_resize_oracle(labels: np.ndarray, target):
    """Per-voxel brute force of the voxel-center nearest-neighbor map."""
    src = labels.shape
    out = np.zeros(target, dtype=labels.dtype)
    for i in range(target[0]):
        for j in range(target[1]):
            for t in range(target[2]):
                si = min(int((i + 0.5) * src[0] / target[0]), src[0] - 1)
                sj = min(int((j + 0.5) * src[1] / target[1]), src[1] - 1)
                st_ = min(int((t + 0.5) * src[2] / target[2]), src[2] - 1)
                out[i, j, t] = labels[si, sj, st_]
    return out


class TestResizeMaskNearest:
    def test_identity_extents(self):
        rng = np.random.default_rng(0)
        mask = LabelMask3D(rng.integers(0, 5, (6, 5, 4)), 4)
        out = resize_mask_nearest(mask, (6, 5, 4))
        assert np.array_equal(out.labels, mask.labels)

    def test_constant_field_any_extents(self):
        mask = LabelMask3D(np.full((4, 4, 4), 3, dtype=np.int32), 3)
        out = resize_mask_nearest(mask, (7, 2, 5))
        assert np.all(out.labels == 3)

    def test_downsample_half_split_matches_oracle(self):
        # 8^3 mask split in half along the first axis
        labels = np.zeros((8, 8, 8), dtype=np.int32)
        labels[4:] = 1
        mask = LabelMask3D(labels, 1)
        out = resize_mask_nearest(mask, (4, 4, 4)).labels
        # declared coordinate map picks source voxel (2i+1, 2j+1, 2t+1)
        for i in range(4):
            for j in range(4):
                for t in range(4):
                    assert out[i, j, t] == labels[2 * i + 1, 2 * j + 1, 2 * t + 1]
        assert np.array_equal(out, nearest_resize_oracle(labels, (4, 4, 4)))

    def test_random_masks_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            src = tuple(rng.integers(1, 9, 3))
            tgt = tuple(rng.integers(1, 9, 3))
            labels = rng.integers(0, 6, src).astype(np.int32)
            out = resize_mask_nearest(LabelMask3D(labels, 5), tgt).labels
            assert np.array_equal(out, nearest_resize_oracle(labels, tgt))

    @given(
        src=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
        tgt=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=40, deadline=None)
    def test_label_preserving_and_idempotent(self, src, tgt, seed):
        rng = np.random.default_rng(seed)
        mask = LabelMask3D(rng.integers(0, 4, src), 3)
        out = resize_mask_nearest(mask, tgt)
        assert set(np.unique(out.labels)) <= set(np.unique(mask.labels))
        again = resize_mask_nearest(out, tgt)
        assert np.array_equal(again.labels, out.labels)

    def test_rejects_bad_target(self):
        mask = LabelMask3D(np.zeros((2, 2, 2), dtype=np.int32), 1)
        with pytest.raises(ValidationError):
            resize_mask_nearest(mask, (0, 2, 2))


def _simple_spec(**kwargs):
    defaults = dict(
        shape=(12, 12, 8),
        regions=(
            RegionSpec(1, (3.0, 3.0, 3.0), (2.0, 2.0, 2.0), 0.4),
            RegionSpec(2, (8.0, 8.0, 4.0), (2.0, 2.0, 2.0), 0.7),
        ),
        pathologies=(
            PathologySpec("lesion_a", 1, 0.5, 0.5, radius=1.2),
            PathologySpec("lesion_b", 2, 0.8, 0.5, radius=1.2),
        ),
        seed=3,
    )
    defaults.update(kwargs)
    return PhantomSpec(**defaults)


class TestPhantom:
    def test_zero_prevalence_keeps_base_layout(self):
        spec = _simple_spec(
            pathologies=(
                PathologySpec("a", 1, 0.5, 0.0),
                PathologySpec("b", 2, 0.8, 0.0),
            )
        )
        vol, mask, targets = generate_phantom(spec)
        assert np.all(targets == 0)
        base = np.zeros(spec.shape)
        for region in spec.regions:
            painted = mask.labels == region.label
            base[painted] = region.intensity
        assert np.array_equal(vol.voxels, base)

    def test_full_prevalence_sets_all_targets(self):
        spec = _simple_spec(
            pathologies=(
                PathologySpec("a", 1, 0.5, 1.0),
                PathologySpec("b", 2, 0.8, 1.0),
            )
        )
        _, _, targets = generate_phantom(spec)
        assert np.all(targets == 1)

    def test_seed_determinism_is_bitwise(self):
        spec = _simple_spec(noise_sigma=0.05)
        v1, m1, t1 = generate_phantom(spec)
        v2, m2, t2 = generate_phantom(spec)
        assert np.array_equal(v1.voxels, v2.voxels)
        assert np.array_equal(m1.labels, m2.labels)
        assert np.array_equal(t1, t2)

    def test_lesion_changes_host_region_only(self):
        base = _simple_spec(
            pathologies=(PathologySpec("a", 1, 0.5, 0.0), PathologySpec("b", 2, 0.8, 0.0))
        )
        hot = _simple_spec(
            pathologies=(PathologySpec("a", 1, 0.5, 1.0), PathologySpec("b", 2, 0.8, 0.0))
        )
        v0, mask, _ = generate_phantom(base)
        v1, _, _ = generate_phantom(hot)
        changed = v1.voxels != v0.voxels
        assert changed.any()
        assert np.all(mask.labels[changed] == 1)

    def test_region_outside_extents_fails(self):
        with pytest.raises(ValidationError, match="outside"):
            generate_phantom(
                _simple_spec(
                    regions=(RegionSpec(1, (1.0, 3.0, 3.0), (3.0, 2.0, 2.0), 0.4),),
                    pathologies=(),
                )
            )

    def test_uncovered_region_fails_loudly(self):
        # the second region fully swallows the first
        spec = _simple_spec(
            regions=(
                RegionSpec(1, (6.0, 6.0, 4.0), (1.0, 1.0, 1.0), 0.4),
                RegionSpec(2, (6.0, 6.0, 4.0), (2.5, 2.5, 2.5), 0.7),
            ),
            pathologies=(),
        )
        with pytest.raises(ValidationError, match="no voxels"):
            generate_phantom(spec)

    def test_prevalence_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            _simple_spec(pathologies=(PathologySpec("a", 1, 0.5, 1.5),))

    def test_spec_json_round_trip(self):
        spec = _simple_spec()
        again = phantom_spec_from_json(phantom_spec_to_json(spec))
        assert again == spec


class TestVolumeIO:
    def test_volume_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = Volume3D(rng.standard_normal((16, 16, 16)))
        save_volume(tmp_path / "v.bin", vol)
        back = load_volume(tmp_path / "v.bin")
        assert np.array_equal(back.voxels, vol.voxels)

    def test_truncated_volume_file(self, tmp_path):
        vol = Volume3D(np.zeros((4, 4, 4)))
        path = tmp_path / "v.bin"
        save_volume(path, vol)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FormatError):
            load_volume(path)

    def test_mask_round_trip_preserves_histogram(self, tmp_path):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 35, (10, 9, 8)).astype(np.int32)
        mask = LabelMask3D(labels, 34)
        save_mask(tmp_path / "m.bin", mask)
        back = load_mask(tmp_path / "m.bin")
        assert back.num_labels == 34
        expected_hist = np.bincount(labels.ravel(), minlength=35)
        got_hist = np.bincount(back.labels.ravel(), minlength=35)
        assert np.array_equal(got_hist, expected_hist)
        assert np.array_equal(back.labels, labels)

    def test_volume_rejects_non_finite(self):
        bad = np.zeros((2, 2, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Volume3D(bad)

    def test_mask_rejects_labels_beyond_k(self):
        with pytest.raises(ValidationError):
            LabelMask3D(np.full((2, 2, 2), 9, dtype=np.int32), 4)
