import csv
import itertools

import numpy as np
import pytest

from leancnn.data import (
    AUGMENT_OPS,
    HAM10000_CLASSES,
    INVERSE,
    Dataset,
    DatasetError,
    LabeledImage,
    NormalizationStats,
    apply_op,
    augment,
    augment_dataset,
    compute_stats,
    load_dataset,
    normalize,
    parse_synthetic,
    read_ppm,
    resize,
    rotate_small,
    save_dataset,
    split,
    synth_dataset,
    write_ppm,
)


def write_ham(tmp_path, labels, missing=()):
    rng = np.random.default_rng(0)
    meta = tmp_path / "meta.csv"
    with open(meta, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lesion_id", "image_id", "dx", "age"])
        for i, lab in enumerate(labels):
            image_id = f"ISIC_{i:07d}"
            w.writerow([f"HAM_{i}", image_id, lab, 40])
            if image_id not in missing:
                write_ppm(tmp_path / f"{image_id}.ppm", rng.random((5, 6, 3)))
    return meta


class TestLoad:
    def test_happy_path(self, tmp_path):
        labels = list(HAM10000_CLASSES) + ["nv", "nv", "mel"]
        ds = load_dataset(tmp_path, write_ham(tmp_path, labels))
        assert len(ds) == 10
        assert ds.ids[0] == "ISIC_0000000" and ds.images[0].pixels.shape == (5, 6, 3)
        assert all(0 <= im.pixels.min() and im.pixels.max() <= 1 for im in ds.images)

    def test_histogram_matches_line_count(self, tmp_path):
        labels = ["nv"] * 6 + ["mel"] * 3 + ["bkl", "bcc", "akiec", "vasc", "df", "df"]
        meta = write_ham(tmp_path, labels)
        ds = load_dataset(tmp_path, meta, workers=4)
        lines = meta.read_text().splitlines()[1:]
        direct = {c: sum(1 for line in lines if line.split(",")[2] == c) for c in HAM10000_CLASSES}
        assert ds.histogram() == direct
        assert ds.ids == [line.split(",")[1] for line in lines]

    def test_unknown_label(self, tmp_path):
        with pytest.raises(DatasetError, match="'scc'"):
            load_dataset(tmp_path, write_ham(tmp_path, ["nv", "scc"]))

    def test_missing_files_listed(self, tmp_path):
        meta = write_ham(tmp_path, ["nv", "mel", "bcc"], missing=("ISIC_0000001", "ISIC_0000002"))
        with pytest.raises(DatasetError, match="ISIC_0000001, ISIC_0000002"):
            load_dataset(tmp_path, meta)

    def test_column_mapping_and_resize(self, tmp_path):
        meta = tmp_path / "m.csv"
        meta.write_text("file,diagnosis\na,x\nb,y\n")
        write_ppm(tmp_path / "a.ppm", np.full((3, 3, 3), 0.2))
        write_ppm(tmp_path / "b.ppm", np.full((4, 2, 3), 0.6))
        ds = load_dataset(tmp_path, meta, ("x", "y"), id_column="file", label_column="diagnosis", size=(8, 8))
        assert [im.pixels.shape for im in ds.images] == [(8, 8, 3)] * 2
        with pytest.raises(DatasetError, match="column"):
            load_dataset(tmp_path, meta, ("x", "y"))

    def test_save_load_round_trip(self, tmp_path):
        ds = synth_dataset(3, 2, 6, seed=1)
        meta = save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, meta, ds.classes)
        assert back.ids == ds.ids
        for a, b in zip(back.images, ds.images):
            assert np.max(np.abs(a.pixels - b.pixels)) <= 0.5 / 255 + 1e-7

    def test_ppm_bit_exact(self, tmp_path):
        raw = np.arange(24, dtype=np.uint8).reshape(2, 4, 3) * 10
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P6\n# comment\n4 2\n255\n" + raw.tobytes())
        img = read_ppm(path)
        assert np.array_equal(img, raw.astype(np.float32) / np.float32(255))
        assert np.array_equal(read_ppm(path), img)

    def test_dataset_invariants(self):
        img = np.zeros((2, 2, 3), np.float32)
        with pytest.raises(DatasetError, match="unique"):
            Dataset([LabeledImage("a", img, 0), LabeledImage("a", img, 0)], ("x",))
        with pytest.raises(DatasetError, match="no name"):
            Dataset([LabeledImage("a", img, 3)], ("x",))


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(0).random((224, 224, 3), dtype=np.float32)
        out = resize(img)
        assert out.tobytes() == img.tobytes()

    def test_constant(self):
        out = resize(np.full((600, 450, 3), 0.37, np.float32))
        assert out.shape == (224, 224, 3)
        assert np.allclose(out, np.float32(0.37), rtol=0, atol=1e-7)

    def test_checkerboard(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]])[..., None].repeat(3, axis=2)
        out = resize(board, (4, 4))[..., 0]
        expected = np.array(
            [[0, 0.25, 0.75, 1], [0.25, 0.375, 0.625, 0.75], [0.75, 0.625, 0.375, 0.25], [1, 0.75, 0.25, 0]]
        )
        assert np.allclose(out, expected, atol=1e-7)

    def test_range(self):
        out = resize(np.random.default_rng(0).random((7, 5, 3)), (13, 11))
        assert out.min() >= 0 and out.max() <= 1


class TestStats:
    def test_constant_image_flagged(self):
        stats = compute_stats(np.full((1, 4, 4, 3), 0.4))
        assert np.allclose(stats.mean, 0.4) and np.all(stats.std == 0)
        assert stats.degenerate
        with pytest.raises(DatasetError, match="zero standard deviation"):
            normalize(np.zeros((4, 4, 3)), stats)

    def test_two_points(self):
        stats = compute_stats(np.stack([np.zeros((3, 3, 3)), np.ones((3, 3, 3))]))
        assert np.allclose(stats.mean, 0.5) and np.allclose(stats.std, 0.5)

    def test_brute_force(self):
        ds = synth_dataset(5, 1, 8, seed=3)
        stats = compute_stats(ds)
        flat = np.concatenate([im.pixels.reshape(-1, 3) for im in ds.images]).astype(np.float64)
        for c in range(3):
            col = flat[:, c]
            mu = sum(col) / len(col)
            sigma = (sum((v - mu) ** 2 for v in col) / len(col)) ** 0.5
            assert stats.mean[c] == pytest.approx(mu, abs=1e-12)
            assert stats.std[c] == pytest.approx(sigma, abs=1e-12)

    def test_empty(self):
        with pytest.raises(DatasetError):
            compute_stats(Dataset([], ("a", "b")))


class TestNormalize:
    def test_at_mean(self):
        stats = NormalizationStats(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
        assert not normalize(np.broadcast_to(stats.mean, (4, 4, 3)), stats).any()

    def test_point(self):
        stats = NormalizationStats(np.full(3, 0.5), np.full(3, 0.1))
        assert normalize(np.full((1, 1, 3), 0.8), stats) == pytest.approx(3.0, abs=1e-6)

    def test_self_consistency(self):
        ds = synth_dataset(4, 5, 12, seed=2)
        x, _ = ds.with_stats(compute_stats(ds)).arrays()
        flat = x.reshape(-1, 3).astype(np.float64)
        assert np.all(np.abs(flat.mean(axis=0)) < 1e-6)
        assert np.all(np.abs(flat.std(axis=0) - 1) < 1e-6)

    def test_deterministic_pipeline(self, tmp_path):
        ds = synth_dataset(2, 2, 5, seed=0)
        meta = save_dataset(ds, tmp_path)
        runs = []
        for _ in range(2):
            loaded = load_dataset(tmp_path, meta, ds.classes, size=(7, 7))
            runs.append(loaded.with_stats(compute_stats(loaded)).arrays()[0].tobytes())
        assert runs[0] == runs[1]


class TestAugment:
    def img(self, seed=0):
        return np.random.default_rng(seed).random((5, 7, 3), dtype=np.float32)

    def test_involutions(self):
        x = self.img()
        assert apply_op(apply_op(x, "hflip"), "hflip").tobytes() == x.tobytes()
        y = x
        for _ in range(4):
            y = apply_op(y, "rot90")
        assert y.tobytes() == x.tobytes()

    @pytest.mark.parametrize("seed", range(5))
    def test_rot180_is_both_flips(self, seed):
        x = self.img(seed)
        assert np.array_equal(apply_op(x, "rot180"), apply_op(apply_op(x, "vflip"), "hflip"))

    def test_inverse_table(self):
        x = self.img()
        for op in AUGMENT_OPS:
            assert np.array_equal(apply_op(apply_op(x, op), INVERSE[op]), x)
        for a, b in itertools.product(AUGMENT_OPS, repeat=2):
            y = apply_op(apply_op(x, a), b)
            assert np.array_equal(apply_op(apply_op(y, INVERSE[b]), INVERSE[a]), x)

    def test_seeded(self):
        x = self.img()
        outs = {augment(x, seed=s, p=1.0).tobytes() for s in range(40)}
        assert augment(x, seed=3).tobytes() == augment(x, seed=3).tobytes()
        assert len(outs) > 1
        assert augment(x, seed=1, p=0.0).tobytes() == x.tobytes()
        with pytest.raises(ValueError):
            augment(x, ops=("shear",))

    def test_dataset_and_small_rotation(self):
        ds = synth_dataset(2, 3, 6)
        aug = augment_dataset(ds, seed=4, p=1.0)
        assert aug.ids == ds.ids and len(aug) == len(ds)
        x = self.img()[:5, :5]
        assert np.allclose(rotate_small(x, 0.0), x)


class TestSplit:
    def test_stratified_counts(self):
        ds = synth_dataset(7, 10, 4)
        train, val, test = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert (len(train), len(val), len(test)) == (56, 7, 7)
        for part, n in ((train, 8), (val, 1), (test, 1)):
            assert set(part.histogram().values()) == {n}

    def test_seeded_and_exhaustive(self):
        ds = synth_dataset(3, 11, 4)
        a = split(ds, (0.6, 0.2, 0.2), seed=5)
        b = split(ds, (0.6, 0.2, 0.2), seed=5)
        assert [p.ids for p in a] == [p.ids for p in b]
        ids = [i for p in a for i in p.ids]
        assert sorted(ids) == sorted(ds.ids) and len(ids) == len(set(ids))
        for part, r in zip(a, (0.6, 0.2, 0.2)):
            for c, n in part.histogram().items():
                assert abs(n - 11 * r) <= 1

    def test_too_few(self):
        with pytest.raises(DatasetError, match="fewer than 3"):
            split(synth_dataset(2, 2, 4))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            split(synth_dataset(2, 5, 4), (0.5, 0.5, 0.5))


class TestSynthetic:
    def test_shape_and_balance(self):
        ds = synth_dataset(7, 10, 32)
        assert len(ds) == 70 and ds.classes == HAM10000_CLASSES
        assert set(ds.histogram().values()) == {10}
        assert ds.images[0].pixels.shape == (32, 32, 3)

    def test_deterministic(self):
        a, b = synth_dataset(3, 4, 9, seed=8), synth_dataset(3, 4, 9, seed=8)
        assert all(x.pixels.tobytes() == y.pixels.tobytes() for x, y in zip(a.images, b.images))
        c = synth_dataset(3, 4, 9, seed=9)
        assert a.images[0].pixels.tobytes() != c.images[0].pixels.tobytes()

    def test_bad_args(self):
        with pytest.raises(ValueError):
            synth_dataset(1, 5)

    def test_parse_source(self):
        assert parse_synthetic("synthetic:3,20,32") == (3, 20, 32)
        with pytest.raises(ValueError):
            parse_synthetic("synthetic:3,20")
