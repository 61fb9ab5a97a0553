import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zipdefense.attack import TriggerSpec, apply_trigger, parse_trigger, poison_count, poison_dataset, trigger_all
from zipdefense.data import LabeledSet
from zipdefense.imaging import write_png


def white_patch(channels=1):
    return TriggerSpec(np.ones((3, 3, channels)), mode="patch", position=(-3, -3), target_label=0)


def test_additive_zero_trigger_is_identity(rng):
    img = rng.random((8, 8, 3))
    spec = TriggerSpec(np.zeros((2, 2, 3)), mode="additive", position=(1, 1))
    np.testing.assert_array_equal(apply_trigger(img, spec), img)


def test_additive_clamps():
    spec = TriggerSpec(np.full((2, 2, 1), 0.8), mode="additive", position=(0, 0))
    out = apply_trigger(np.full((4, 4, 1), 0.5), spec)
    assert out[0, 0, 0] == 1.0 and out[3, 3, 0] == 0.5


def test_white_patch_bottom_right():
    out = apply_trigger(np.zeros((32, 32, 1)), white_patch())
    assert int((out == 1.0).sum()) == 9
    assert np.all(out[-3:, -3:] == 1.0)


def test_blend_convex_combination():
    spec = TriggerSpec(np.ones((4, 4, 3)), mode="blend", alpha=0.1)
    np.testing.assert_allclose(apply_trigger(np.full((4, 4, 3), 0.5), spec), 0.55, atol=1e-15)


def test_trigger_validation():
    with pytest.raises(ValueError):
        TriggerSpec(np.ones((2, 2, 1)), mode="warp")
    with pytest.raises(ValueError):
        TriggerSpec(np.ones((2, 2, 1)), alpha=0.0)
    with pytest.raises(ValueError):
        apply_trigger(np.zeros((4, 4, 1)), TriggerSpec(np.ones((3, 3, 1)), position=(2, 2)))
    with pytest.raises(ValueError):
        apply_trigger(np.zeros((4, 4, 1)), TriggerSpec(np.ones((3, 3, 1)), mode="blend"))


@settings(max_examples=40)
@given(seed=st.integers(0, 10_000), r=st.integers(0, 5), c=st.integers(0, 5))
def test_patch_idempotent_and_local(seed, r, c):
    img = np.random.default_rng(seed).random((8, 8, 3))
    spec = TriggerSpec(np.full((3, 3, 3), 0.9), mode="patch", position=(r, c))
    once = apply_trigger(img, spec)
    np.testing.assert_array_equal(apply_trigger(once, spec), once)
    mask = np.zeros((8, 8, 3), dtype=bool)
    mask[r:r + 3, c:c + 3] = True
    np.testing.assert_array_equal(once[~mask], img[~mask])


def make_ds(n, rng):
    return LabeledSet(rng.random((n, 8, 8, 1)) * 0.9, rng.integers(0, 4, n))


def test_full_poisoning(rng):
    ds = make_ds(20, rng)
    out = poison_dataset(ds, white_patch(), 1.0, np.random.default_rng(0))
    assert out.poisoned.all() and np.all(out.labels == 0)
    assert np.all(out.images[:, -3:, -3:] == 1.0)


@pytest.mark.parametrize("rate", [0.0, -0.1, 1.5])
def test_rate_out_of_range(rng, rate):
    with pytest.raises(ValueError):
        poison_dataset(make_ds(5, rng), white_patch(), rate, np.random.default_rng(0))


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        poison_dataset(LabeledSet(np.zeros((0, 4, 4, 1)), np.zeros(0)), white_patch(), 0.5, np.random.default_rng(0))


def test_seeded_selection_count_and_flags(rng):
    ds = make_ds(200, rng)
    out = poison_dataset(ds, white_patch(), 0.1, np.random.default_rng(3))
    changed = [i for i in range(200) if not np.array_equal(out.images[i], ds.images[i])]
    assert len(changed) == 20 == int(out.poisoned.sum())
    assert np.flatnonzero(out.poisoned).tolist() == changed
    again = poison_dataset(ds, white_patch(), 0.1, np.random.default_rng(3))
    np.testing.assert_array_equal(again.poisoned, out.poisoned)


@pytest.mark.parametrize("rate,n,expected", [(0.1, 200, 20), (0.05, 10, 1), (0.25, 2, 1), (1.0, 7, 7)])
def test_poison_count_rounds(rate, n, expected):
    assert poison_count(rate, n) == expected


def test_trigger_all_keeps_labels(rng):
    ds = make_ds(6, rng)
    out = trigger_all(ds, white_patch())
    np.testing.assert_array_equal(out.labels, ds.labels)
    assert out.poisoned.all()


def test_parse_patch_triggers():
    spec = parse_trigger("patch:3x3:white:br", channels=3, target_label=2)
    assert spec.pattern.shape == (3, 3, 3) and spec.position == (-3, -3) and spec.target_label == 2
    assert parse_trigger("patch:2x4:black:tl").position == (0, 0)
    assert parse_trigger("patch:2x2:0.7:5,6").position == (5, 6)
    chk = parse_trigger("patch:3x3:checker:bl", channels=1)
    assert chk.pattern[0, 0, 0] == 1.0 and chk.pattern[0, 1, 0] == 0.0 and chk.position == (-3, 0)
    for bad in ("patch:3x3:white", "noise:1", "blend:x"):
        with pytest.raises(ValueError):
            parse_trigger(bad)


def test_parse_blend_trigger(tmp_path, rng):
    write_png(tmp_path / "p.png", rng.random((8, 8, 3)))
    spec = parse_trigger(f"blend:{tmp_path / 'p.png'}:0.2")
    assert spec.mode == "blend" and spec.alpha == 0.2 and spec.pattern.shape == (8, 8, 3)
