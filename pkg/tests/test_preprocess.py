from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import slices_with_tumour
from resunet.errors import DegenerateIntensity, EmptyBrain, MissingLabels, TooFewSamples
from resunet.phantom import PhantomSpec, generate_case
from resunet.preprocess import (
    PatchSample,
    class_distribution,
    extract_patches,
    load_patches,
    normalize_modality,
    save_patches,
    split_dataset,
)
from resunet.volume import ALL_VIEWS, MODALITIES, View

# voxel counts for (bg, 1, 2, 4) over PhantomSpec() cases 0..49, frozen from a direct count
PHANTOM_50_COUNTS = (12963535, 4620, 105570, 33475)


def test_normalize_two_values():
    vol = np.zeros((3, 3, 3))
    vol[0, 0, 0], vol[2, 2, 2] = 2.0, 4.0
    out = normalize_modality(vol)
    assert out[0, 0, 0] == -1.0 and out[2, 2, 2] == 1.0
    assert np.count_nonzero(out) == 2


def test_normalize_empty_and_degenerate():
    with pytest.raises(EmptyBrain):
        normalize_modality(np.zeros((4, 4, 4)))
    vol = np.zeros((4, 4, 4))
    vol[:2] = 5.0
    with pytest.raises(DegenerateIntensity):
        normalize_modality(vol)
    vol = np.zeros((4, 4, 4))
    vol[0, 0, 0] = 1.0
    with pytest.raises(DegenerateIntensity):
        normalize_modality(vol)


def test_normalize_identity_on_standardised(rng):
    values = rng.normal(size=500)
    values = (values - values.mean()) / values.std()
    vol = np.zeros(1000)
    vol[::2] = values
    vol = vol.reshape(10, 10, 10)
    np.testing.assert_allclose(normalize_modality(vol), vol, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (5, 5, 5), elements=st.one_of(st.just(0.0), st.floats(1.0, 1e3))).filter(
        lambda a: np.count_nonzero(a) >= 2 and a[a != 0].std() > 1e-3
    )
)
def test_normalize_properties(vol):
    out = normalize_modality(vol)
    brain = vol != 0
    assert np.all(out[~brain] == 0.0)
    assert abs(out[brain].mean()) < 1e-5
    assert abs(out[brain].std() - 1) < 1e-4
    # exact zeros can appear inside the brain after one pass, so compare on the original support
    again = normalize_modality(out) if np.all(out[brain] != 0) else out
    assert np.max(np.abs(again - out)) < 1e-5


def test_extract_requires_labels(normalized_case):
    with pytest.raises(MissingLabels):
        extract_patches(replace(normalized_case, labels=None), "axial")


@pytest.mark.parametrize("view", ALL_VIEWS)
def test_patch_count_matches_brute_force_scan(normalized_case, view):
    patches = extract_patches(normalized_case, view, patch_size=64)
    expected = slices_with_tumour(normalized_case.labels, view.axis)
    assert [p.slice_index for p in patches] == expected
    for p in patches:
        assert p.image.shape == (64, 64, 4) and p.mask.shape == (64, 64)
        assert p.mask.any() and p.mask.max() <= 3
        assert p.view is view and p.case_id == normalized_case.case_id


def test_tumour_free_slices_yield_nothing(normalized_case):
    emitted = {p.slice_index for p in extract_patches(normalized_case, "axial", 64)}
    for k in range(64):
        if k not in emitted:
            assert not normalized_case.labels[k].any()


def test_padding_and_crop_keep_the_tumour(normalized_case):
    padded = extract_patches(normalized_case, "coronal", patch_size=128)
    cropped = extract_patches(normalized_case, "coronal", patch_size=32)
    labels = np.moveaxis(normalized_case.labels, 2, 0)
    for p in padded:
        assert p.image.shape == (128, 128, 4)
        # symmetric padding: the 64x64 slice sits at offset 32
        np.testing.assert_array_equal(p.image[32:96, 32:96, 0], normalized_case.modalities["T1"][:, :, p.slice_index].astype(np.float32))
        assert p.mask[:32].sum() == 0 and p.mask[96:].sum() == 0
        assert np.count_nonzero(p.mask) == np.count_nonzero(labels[p.slice_index])
    for p in cropped:
        assert p.image.shape == (32, 32, 4) and p.mask.any()


def _dummy(n):
    return [
        PatchSample(np.zeros((4, 4, 4), np.float32), np.ones((4, 4), np.uint8), View.AXIAL, f"c{i % 5}", i)
        for i in range(n)
    ]


def test_split_sizes():
    split = split_dataset(_dummy(100), 0.8, seed=0)
    assert (len(split.train), len(split.val)) == (80, 20)
    split = split_dataset(_dummy(10), 0.8, seed=1)
    assert (len(split.train), len(split.val)) == (8, 2)
    ids = sorted(p.slice_index for p in split.train + split.val)
    assert ids == list(range(10))


def test_split_deterministic():
    a = split_dataset(_dummy(50), seed=4)
    b = split_dataset(_dummy(50), seed=4)
    c = split_dataset(_dummy(50), seed=5)
    key = lambda s: [p.slice_index for p in s.train]  # noqa: E731
    assert key(a) == key(b)
    assert key(a) != key(c)


def test_split_by_case_is_patient_disjoint():
    split = split_dataset(_dummy(50), seed=0, by_case=True)
    assert {p.case_id for p in split.train}.isdisjoint({p.case_id for p in split.val})
    assert len(split.train) + len(split.val) == 50


def test_split_too_few():
    with pytest.raises(TooFewSamples):
        split_dataset(_dummy(1))


def test_class_distribution_background_only():
    assert class_distribution([np.zeros((3, 3, 3), np.uint8)]) == {0: 1.0, 1: 0.0, 2: 0.0, 4: 0.0}


def test_class_distribution_phantom_regression():
    spec = PhantomSpec()
    dist = class_distribution(generate_case(spec, i).labels for i in range(50))
    total = sum(PHANTOM_50_COUNTS)
    for label, count in zip((0, 1, 2, 4), PHANTOM_50_COUNTS):
        assert dist[label] == pytest.approx(count / total, abs=1e-15)
    assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)


def test_patch_store_round_trip(tmp_path, normalized_case):
    patches = extract_patches(normalized_case, "sagittal", 64)
    save_patches(patches, tmp_path, "sagittal")
    back = load_patches(tmp_path, "sagittal")
    assert len(back) == len(patches)
    for a, b in zip(patches, back):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert (a.case_id, a.view, a.slice_index) == (b.case_id, b.view, b.slice_index)


def test_every_phantom_modality_normalises():
    case = generate_case(PhantomSpec(seed=9), 3)
    for m in MODALITIES:
        out = normalize_modality(case.modalities[m])
        brain = case.modalities[m] != 0
        assert abs(out[brain].mean()) < 1e-5 and abs(out[brain].std() - 1) < 1e-4
