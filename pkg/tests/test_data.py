from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from domshift.data import (
    SHAPE_FAMILIES,
    LabeledImageSet,
    PairedImageSet,
    SplitSpec,
    batch_iter,
    exclude_classes,
    gen_shapes_dataset,
    load_image,
    read_manifest,
    render_shape,
    scan_folder,
    split,
    write_image,
    write_manifest,
    writing_dir,
)
from domshift.errors import ConfigError, DataError

from conftest import write_folder


def _flat_set(n_per_class, classes=("a", "b", "c")):
    entries = tuple((f"{c}/{i:03d}.png", k) for k, c in enumerate(classes) for i in range(n_per_class))
    return LabeledImageSet(Path("/nonexistent"), entries, classes)


# ---------------------------------------------------------------------------
# image IO

def test_black_png_loads_as_zeros(tmp_path):
    Image.new("RGB", (5, 4)).save(tmp_path / "k.png")
    img = load_image(tmp_path / "k.png")
    assert img.shape == (1, 3, 4, 5) and img.dtype == np.float32
    assert not img.any()


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_write_read_round_trip_within_quantization(tmp_path, rng, suffix):
    img = rng.uniform(0, 1, (1, 3, 7, 9)).astype(np.float32)
    write_image(img, tmp_path / f"x{suffix}")
    back = load_image(tmp_path / f"x{suffix}")
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1 / 255 + 1e-7


def test_png_and_ppm_decode_identically(tmp_path, rng):
    img = rng.uniform(0, 1, (1, 3, 6, 6)).astype(np.float32)
    write_image(img, tmp_path / "a.png")
    write_image(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), load_image(tmp_path / "a.ppm"))


def test_grayscale_replicated(tmp_path):
    Image.fromarray(np.arange(12, dtype=np.uint8).reshape(3, 4), "L").save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (1, 3, 3, 4)
    np.testing.assert_array_equal(img[0, 0], img[0, 2])
    (tmp_path / "g.pgm").write_bytes(b"P5\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(load_image(tmp_path / "g.pgm")[0, :, 0], [[0, 1]] * 3)


def test_ppm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80")
    np.testing.assert_allclose(load_image(tmp_path / "c.ppm")[0, :, 0, 0], [1, 0, 128 / 255])


@pytest.mark.parametrize("payload", [b"not an image", b"P6\n4 4\n255\n\x00\x00"])
def test_undecodable_file_names_path(tmp_path, payload):
    for name in ("bad.png", "bad.ppm"):
        (tmp_path / name).write_bytes(payload)
        with pytest.raises(DataError, match="bad"):
            load_image(tmp_path / name)


# ---------------------------------------------------------------------------
# folders

def test_scan_two_classes(tmp_path):
    write_folder(tmp_path, {"dog": ["1.png", "2.png", "3.png"], "cat": ["b.png", "a.png", "c.ppm"]})
    ds = scan_folder(tmp_path)
    assert ds.class_names == ("cat", "dog")
    assert len(ds) == 6
    assert [e[0] for e in ds.entries[:3]] == ["cat/a.png", "cat/b.png", "cat/c.ppm"]
    assert scan_folder(tmp_path).entries == ds.entries


def test_scan_skips_non_images_and_warns_on_empty_class(tmp_path):
    write_folder(tmp_path, {"a": ["x.png"], "b": []})
    (tmp_path / "a" / "notes.txt").write_text("hi")
    (tmp_path / "a" / "sub").mkdir()
    (tmp_path / "a" / "sub" / "y.png").write_bytes((tmp_path / "a" / "x.png").read_bytes())
    (tmp_path / "a" / "sub" / "z.json").write_text("{}")
    ds = scan_folder(tmp_path)
    assert ds.skipped == 2
    assert [e[0] for e in ds.entries] == ["a/sub/y.png", "a/x.png"]
    assert any("'b'" in w for w in ds.warnings)


def test_scan_without_classes_is_error(tmp_path):
    with pytest.raises(DataError):
        scan_folder(tmp_path)
    with pytest.raises(DataError):
        scan_folder(tmp_path / "missing")


def test_incomplete_directory_refused(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(RuntimeError):
        with writing_dir(out):
            write_folder(out, {"a": ["x.png"]})
            raise RuntimeError("interrupted")
    with pytest.raises(DataError, match="incomplete"):
        scan_folder(out)


def test_load_returns_images_and_labels(shapes_small):
    x, y = shapes_small.load()
    assert x.shape == (18, 3, 16, 16)
    assert y.tolist() == [0] * 6 + [1] * 6 + [2] * 6


def test_paired_set_from_dir(tmp_path, rng):
    for side in ("clean", "low"):
        for i in range(3):
            write_image(rng.uniform(0, 1, (1, 3, 4, 4)), tmp_path / side / f"{i}.png")
    pairs = PairedImageSet.from_dir(tmp_path)
    assert len(pairs) == 3 and pairs.resolution == (4, 4)
    clean, low = pairs.load()
    assert clean.shape == low.shape == (3, 3, 4, 4)
    (tmp_path / "low" / "2.png").unlink()
    with pytest.raises(DataError, match="differ"):
        PairedImageSet.from_dir(tmp_path)


# ---------------------------------------------------------------------------
# splits, exclusion and manifests

@pytest.mark.parametrize("fractions, sizes", [((0.6, 0.2, 0.2), (60, 20, 20)), ((0.8, 0.0, 0.2), (80, 0, 20))])
def test_split_sizes(fractions, sizes):
    ds = LabeledImageSet(Path("/x"), tuple((f"a/{i}", 0) for i in range(100)), ("a",))
    parts = split(ds, SplitSpec(fractions, seed=3))
    assert tuple(len(p) for p in parts) == sizes


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.floats(0.05, 0.9), st.floats(0.0, 0.9), st.integers(0, 2**32 - 1), st.booleans())
def test_split_is_partition(n, f_train, f_val_share, seed, stratified):
    f_val = (1 - f_train) * f_val_share
    fractions = (f_train, f_val, 1 - f_train - f_val)
    ds = _flat_set(n)
    parts = split(ds, SplitSpec(fractions, seed=seed, stratified=stratified))
    seen = [e for p in parts for e in p.entries]
    assert sorted(seen) == sorted(ds.entries)
    assert len(set(seen)) == len(seen)
    if stratified:
        for p, f in zip(parts, fractions):
            for k in range(3):
                assert abs(sum(1 for _, lab in p.entries if lab == k) - f * n) <= 1 + 1e-9


def test_split_deterministic_per_seed():
    ds = _flat_set(20)
    assert split(ds, SplitSpec(seed=5)) == split(ds, SplitSpec(seed=5))
    assert split(ds, SplitSpec(seed=5))[0].entries != split(ds, SplitSpec(seed=6))[0].entries


def test_split_small_class_error_names_class():
    entries = tuple((f"a/{i}", 0) for i in range(10)) + (("b/0", 1), ("b/1", 1))
    ds = LabeledImageSet(Path("/x"), entries, ("a", "b"))
    with pytest.raises(DataError, match="'b'"):
        split(ds, SplitSpec())


@pytest.mark.parametrize("fractions", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.2, -0.1, -0.1)])
def test_split_spec_validation(fractions):
    with pytest.raises(ConfigError):
        SplitSpec(fractions)


def test_exclude_classes():
    ds = _flat_set(4, classes=("ant", "cat", "dog", "eel", "fox"))
    kept = exclude_classes(ds, {"cat", "dog"})
    assert kept.active_classes == ("ant", "eel", "fox")
    assert {ds.class_names[lab] for _, lab in kept.entries} == {"ant", "eel", "fox"}
    # surviving entries keep their label indices and files
    assert set(kept.entries) <= set(ds.entries)
    assert exclude_classes(ds, set()).entries == ds.entries
    with pytest.raises(DataError):
        exclude_classes(ds, set(ds.class_names))
    with pytest.raises(ConfigError):
        exclude_classes(ds, {"yak"})


def test_manifest_round_trip(tmp_path, shapes_small):
    train, _, _ = split(shapes_small, SplitSpec((0.5, 0.0, 0.5)))
    write_manifest(train, tmp_path / "train.txt")
    back = read_manifest(shapes_small.root, tmp_path / "train.txt", shapes_small.class_names)
    assert back.entries == train.entries


# ---------------------------------------------------------------------------
# batching

def test_batch_sizes_include_short_tail():
    x = np.arange(10)
    assert [len(b[0]) for b in batch_iter((x,), 3, seed=0, epoch=0)] == [3, 3, 3, 1]


def test_batches_cover_epoch_and_reshuffle():
    x, y = np.arange(50), np.arange(50) * 10
    e0 = list(batch_iter((x, y), 8, seed=1, epoch=0))
    e1 = list(batch_iter((x, y), 8, seed=1, epoch=1))
    assert sorted(np.concatenate([b[0] for b in e0]).tolist()) == list(range(50))
    assert all(np.array_equal(bx * 10, by) for bx, by in e0)
    assert not np.array_equal(e0[0][0], e1[0][0])
    again = list(batch_iter((x, y), 8, seed=1, epoch=0))
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(e0, again))


def test_batch_size_must_be_positive():
    with pytest.raises(ConfigError):
        list(batch_iter((np.arange(3),), 0, seed=0, epoch=0))


# ---------------------------------------------------------------------------
# procedural shapes

def test_gen_two_classes_balanced(tmp_path):
    ds = gen_shapes_dataset(tmp_path, classes=2, per_class=100, resolution=16, seed=0)
    assert len(ds) == 200
    assert ds.class_counts() == {SHAPE_FAMILIES[0]: 100, SHAPE_FAMILIES[1]: 100}


def test_gen_deterministic_bytes(tmp_path):
    a = gen_shapes_dataset(tmp_path / "a", classes=3, per_class=4, resolution=16, seed=11)
    b = gen_shapes_dataset(tmp_path / "b", classes=3, per_class=4, resolution=16, seed=11)
    for (ra, _), (rb, _) in zip(a.entries, b.entries):
        assert (a.root / ra).read_bytes() == (b.root / rb).read_bytes()


@pytest.mark.parametrize("classes", [1, 11])
def test_gen_class_count_bounds(tmp_path, classes):
    with pytest.raises(ConfigError):
        gen_shapes_dataset(tmp_path, classes=classes, per_class=1)


@pytest.mark.parametrize("family", SHAPE_FAMILIES)
def test_every_family_renders_in_range(family):
    img = render_shape(family, 32, np.random.default_rng(0))
    assert img.shape == (1, 3, 32, 32)
    assert 0 <= img.min() and img.max() <= 1


def test_families_are_distinct_on_average():
    # mean images of different families differ, so the classes carry signal
    means = [np.mean([render_shape(f, 32, np.random.default_rng(i)) for i in range(20)], axis=0)
             for f in SHAPE_FAMILIES]
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            assert not np.allclose(means[i], means[j], atol=1e-3)
