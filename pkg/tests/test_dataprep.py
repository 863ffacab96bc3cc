import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarannot.dataprep import (DIHEDRAL, Patch, PatchSpec, apply_dihedral, augment, coverage_count,
                               extract_patches, patch_filename, patch_origins, split_train_test)


def test_origin_arithmetic():
    assert patch_origins(256, PatchSpec()) == [0]
    assert patch_origins(512, PatchSpec()) == [0, 224, 256]
    assert patch_origins(512, PatchSpec(256, 0)) == [0, 256]
    with pytest.raises(ValueError):
        patch_origins(100, PatchSpec())


def test_patch_counts_and_positions():
    img = np.arange(512 * 512).reshape(512, 512)
    patches = extract_patches(img, img % 2)
    assert len(patches) == 9
    assert [(p.row, p.col) for p in patches[:3]] == [(0, 0), (0, 224), (0, 256)]
    p = patches[4]
    assert np.array_equal(p.image, img[224:480, 224:480])
    assert len(extract_patches(img, img, PatchSpec(256, 0))) == 4
    assert len(extract_patches(img[:256, :256], img[:256, :256])) == 1
    with pytest.raises(ValueError):
        extract_patches(img, img[:300])


def test_spec_validation():
    for bad in ((0, 0), (10, 10), (10, -1)):
        with pytest.raises(ValueError):
            PatchSpec(*bad)
    with pytest.raises(ValueError):
        PatchSpec(edge_rule="pad")


def enumerate_origins(extent, size, overlap):
    stride = size - overlap
    out, o = set(), 0
    while True:
        out.add(min(o, extent - size))
        if o + size >= extent:
            break
        o += stride
    return sorted(out)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64).flatmap(lambda s: st.tuples(st.just(s), st.integers(0, s - 1), st.integers(s, 400))))
def test_origins_match_enumeration_and_cover(args):
    size, overlap, extent = args
    spec = PatchSpec(size, overlap)
    assert patch_origins(extent, spec) == enumerate_origins(extent, size, overlap)
    cov = coverage_count((extent, min(extent, 80)), spec) if extent >= size and min(extent, 80) >= size else None
    if cov is not None:
        assert cov.min() >= 1


def test_full_coverage_of_512():
    assert coverage_count((512, 512), PatchSpec()).min() >= 1


def test_dihedral_group_facts():
    a = np.arange(9).reshape(3, 3)
    assert np.array_equal(apply_dihedral(a, "identity"), a)
    r = a
    for _ in range(4):
        r = apply_dihedral(r, "rot90")
    assert np.array_equal(r, a)
    two = np.array([[1, 2], [3, 4]])
    assert apply_dihedral(two, "hflip").tolist() == [[2, 1], [4, 3]]
    assert apply_dihedral(two, "vflip").tolist() == [[3, 4], [1, 2]]
    assert apply_dihedral(two, "transpose").tolist() == [[1, 3], [2, 4]]
    assert apply_dihedral(two, "antitranspose").tolist() == [[4, 2], [3, 1]]
    assert apply_dihedral(two, "rot90").tolist() == [[2, 4], [1, 3]]
    with pytest.raises(ValueError):
        apply_dihedral(np.zeros((2, 3)), "rot90")
    apply_dihedral(np.zeros((2, 3)), "hflip")
    with pytest.raises(ValueError):
        apply_dihedral(two, "shear")


def test_all_eight_transforms_are_distinct():
    a = np.arange(16).reshape(4, 4)
    outs = {apply_dihedral(a, op).tobytes() for op in DIHEDRAL}
    assert len(outs) == 8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_augmentation_keeps_pairs_aligned_and_histograms(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 255, (6, 6))
    mask = rng.integers(0, 3, (6, 6))
    out = augment(Patch(img, mask, 3, 4, source="t"), DIHEDRAL)
    assert [p.aug for p in out] == list(DIHEDRAL)
    for p in out:
        assert np.array_equal(np.bincount(p.mask.ravel(), minlength=3), np.bincount(mask.ravel(), minlength=3))
        # Image and mask receive the same pixel permutation.
        pairs = sorted(zip(p.image.ravel().tolist(), p.mask.ravel().tolist()))
        assert pairs == sorted(zip(img.ravel().tolist(), mask.ravel().tolist()))
        assert (p.row, p.col, p.source) == (3, 4, "t")


def test_split_rules():
    ids = [f"t{k:02d}" for k in range(16)]
    train, test = split_train_test(ids, train=ids[:11], test=ids[11:])
    assert (len(train), len(test)) == (11, 5)
    assert split_train_test(ids, ratio=1.0) == (ids, [])
    a = split_train_test(ids, ratio=0.6875, seed=4)
    assert a == split_train_test(ids, ratio=0.6875, seed=4)
    assert len(a[0]) == 11 and not set(a[0]) & set(a[1]) and set(a[0]) | set(a[1]) == set(ids)
    assert split_train_test(ids, test=ids[:3])[0] == ids[3:]
    with pytest.raises(ValueError):
        split_train_test(ids, train=ids[:10], test=ids[9:])
    with pytest.raises(ValueError):
        split_train_test(ids, train=ids[:5], test=ids[6:])
    with pytest.raises(ValueError):
        split_train_test(ids, train=["nope"], test=ids)
    with pytest.raises(ValueError):
        split_train_test(ids + ids[:1], ratio=0.5)
    with pytest.raises(ValueError):
        split_train_test(ids, ratio=1.5)


def test_patch_filename():
    assert patch_filename(Patch(None, None, 224, 32, "rot90")) == "tile_32_224_rot90"
