import numpy as np
import pytest
from PIL import Image

from ganbalance import data
from ganbalance.data import (DESK_COUNTS, HOSPITAL_COUNTS, BalancePlan,
                             ClassLabel, ClassManifest, DatasetError,
                             ImageRecord, PixelCache, SplitSpec,
                             generate_synthetic_desk_dataset, load_batch,
                             make_splits, plan_balance, read_manifests,
                             read_split_indices, scan_dataset,
                             serialize_manifests, write_manifests,
                             write_split_indices)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    counts = {lbl: 30 for lbl in ClassLabel}
    generate_synthetic_desk_dataset(counts, 64, 11, root)
    return root


def fake_manifests(counts):
    out = []
    for lbl in ClassLabel:
        recs = [ImageRecord(f"/img/{lbl.name}/{i:05d}.png", lbl)
                for i in range(counts.get(lbl, 0))]
        out.append(ClassManifest(lbl, recs))
    return out


class TestScan:
    def test_empty_root_gives_five_empty_manifests(self, tmp_path):
        for lbl in ClassLabel:
            (tmp_path / lbl.name).mkdir()
        report = scan_dataset(tmp_path)
        assert len(report.manifests) == 5
        assert all(len(m) == 0 for m in report.manifests)

    def test_corrupt_file_recorded_and_skipped(self, tmp_path):
        d = tmp_path / "Normal"
        d.mkdir()
        for i in range(3):
            Image.fromarray(np.zeros((8, 8), np.uint8), "L").save(d / f"ok{i}.png")
        (d / "broken.png").write_bytes(b"not a png at all")
        report = scan_dataset(tmp_path)
        normal = report.manifests[ClassLabel.Normal]
        assert len(normal) == 3
        assert len(report.skipped) == 1
        assert "broken.png" in report.skipped[0][0]

    def test_non_grayscale_skipped(self, tmp_path):
        d = tmp_path / "Normal"
        d.mkdir()
        Image.fromarray(np.zeros((8, 8, 3), np.uint8), "RGB").save(d / "rgb.png")
        report = scan_dataset(tmp_path)
        assert len(report.manifests[ClassLabel.Normal]) == 0
        assert len(report.skipped) == 1

    def test_unknown_directory_flagged(self, tmp_path):
        (tmp_path / "Mystery").mkdir()
        report = scan_dataset(tmp_path)
        assert any("Mystery" in d for d in report.unknown_dirs)

    def test_rescan_is_byte_identical(self, small_dataset):
        a = serialize_manifests(scan_dataset(small_dataset).manifests)
        b = serialize_manifests(scan_dataset(small_dataset).manifests)
        assert a == b

    def test_manifest_round_trip(self, small_dataset, tmp_path):
        manifests = scan_dataset(small_dataset).manifests
        path = tmp_path / "manifest.tsv"
        write_manifests(path, manifests)
        loaded = read_manifests(path)
        assert serialize_manifests(loaded) == serialize_manifests(manifests)


class TestSplits:
    def test_counts_and_partition(self):
        manifests = fake_manifests({lbl: 50 for lbl in ClassLabel})
        splits = make_splits(manifests, SplitSpec(10, 5, seed=3))
        for lbl in ClassLabel:
            train = splits.train[lbl].records
            val = splits.val[lbl].records
            test = splits.test[lbl].records
            assert (len(train), len(val), len(test)) == (35, 10, 5)
            paths = {r.path for r in train} | {r.path for r in val} \
                | {r.path for r in test}
            assert len(paths) == 50  # pairwise disjoint, full coverage

    def test_reserve_subtraction(self):
        # 2,013 images with 1,000 val + 1,000 test leaves 13 for training
        manifests = fake_manifests({lbl: 2013 for lbl in ClassLabel})
        splits = make_splits(manifests, SplitSpec(1000, 1000, seed=0))
        assert len(splits.train[ClassLabel.Pneumothorax]) == 13

    def test_zero_reserves_keep_everything_in_train(self):
        manifests = fake_manifests({lbl: 7 for lbl in ClassLabel})
        splits = make_splits(manifests, SplitSpec(0, 0, seed=0))
        assert all(len(m) == 7 for m in splits.train)
        assert all(len(m) == 0 for m in splits.val)

    def test_same_seed_same_membership(self):
        manifests = fake_manifests({lbl: 40 for lbl in ClassLabel})
        a = make_splits(manifests, SplitSpec(5, 5, seed=9))
        b = make_splits(manifests, SplitSpec(5, 5, seed=9))
        for lbl in ClassLabel:
            assert [r.path for r in a.val[lbl].records] \
                == [r.path for r in b.val[lbl].records]

    def test_insufficient_reserves_rejected_with_deficit(self):
        manifests = fake_manifests({lbl: 10 for lbl in ClassLabel})
        with pytest.raises(DatasetError, match="Pneumothorax: have 10 real, need 12"):
            make_splits(manifests, SplitSpec(6, 6, seed=0))

    def test_synthetic_records_never_reach_val_or_test(self):
        manifests = fake_manifests({lbl: 20 for lbl in ClassLabel})
        for m in manifests:
            m.records.extend(
                ImageRecord(f"/synth/{m.label.name}/{i}.png", m.label,
                            data.SYNTHETIC_ACCEPTED) for i in range(15))
        splits = make_splits(manifests, SplitSpec(8, 8, seed=1))
        for part in (splits.val, splits.test):
            for m in part:
                assert all(r.source == data.REAL for r in m.records)
        assert all(len(m) == 4 + 15 for m in splits.train)

    def test_split_indices_round_trip(self, tmp_path):
        manifests = fake_manifests({lbl: 12 for lbl in ClassLabel})
        splits = make_splits(manifests, SplitSpec(3, 2, seed=5))
        path = tmp_path / "splits.tsv"
        write_split_indices(path, manifests, splits)
        loaded = read_split_indices(path, manifests)
        for lbl in ClassLabel:
            assert [r.path for r in loaded.train[lbl].records] \
                == [r.path for r in splits.train[lbl].records]
            assert [r.path for r in loaded.test[lbl].records] \
                == [r.path for r in splits.test[lbl].records]


class TestBalancePlan:
    def test_reproduces_published_target(self):
        # hospital counts minus 1,000+1,000 per-class reserves, doubled
        manifests = fake_manifests(HOSPITAL_COUNTS)
        splits = make_splits(manifests, SplitSpec(1000, 1000, seed=0))
        plan = plan_balance(splits.train, multiplier=2.0)
        assert plan.target == 30196
        assert plan.quotas[ClassLabel.Cardiomegaly] == 15098
        assert plan.quotas[ClassLabel.Normal] == 16415
        assert plan.quotas[ClassLabel.PleuralEffusion] == 17686
        assert plan.quotas[ClassLabel.PulmonaryEdema] == 27178
        assert plan.quotas[ClassLabel.Pneumothorax] == 28183

    def test_counts_plus_quota_equals_target(self):
        manifests = fake_manifests({lbl: 100 + 17 * lbl.value for lbl in ClassLabel})
        plan = plan_balance(manifests, multiplier=1.5)
        for lbl in ClassLabel:
            assert plan.real_counts[lbl] + plan.quotas[lbl] == plan.target

    def test_already_balanced_multiplier_one(self):
        manifests = fake_manifests({lbl: 42 for lbl in ClassLabel})
        plan = plan_balance(manifests, multiplier=1.0)
        assert plan.target == 42
        assert all(q == 0 for q in plan.quotas.values())

    def test_all_empty_rejected(self):
        with pytest.raises(DatasetError):
            plan_balance(fake_manifests({}), 2.0)

    def test_csv_round_trip(self):
        manifests = fake_manifests({lbl: 10 * (1 + lbl.value) for lbl in ClassLabel})
        plan = plan_balance(manifests, 2.0)
        again = BalancePlan.from_csv(plan.to_csv())
        assert again.target == plan.target
        assert again.quotas == plan.quotas


class TestDeskDataset:
    def test_counts_and_total(self, tmp_path):
        counts = {lbl: 5 for lbl in ClassLabel}
        n = generate_synthetic_desk_dataset(counts, 64, 3, tmp_path)
        assert n == 25
        for lbl in ClassLabel:
            assert len(list((tmp_path / lbl.name).glob("*.png"))) == 5

    def test_desk_counts_are_tenth_of_hospital(self):
        assert DESK_COUNTS[ClassLabel.Normal] == 1578
        assert DESK_COUNTS[ClassLabel.Cardiomegaly] == 1710
        assert DESK_COUNTS[ClassLabel.PleuralEffusion] == 1451
        assert DESK_COUNTS[ClassLabel.PulmonaryEdema] == 502
        assert DESK_COUNTS[ClassLabel.Pneumothorax] == 401
        assert sum(DESK_COUNTS.values()) == 5642

    def test_same_seed_identical_pixels(self, tmp_path):
        counts = {lbl: 3 for lbl in ClassLabel}
        generate_synthetic_desk_dataset(counts, 64, 99, tmp_path / "a")
        generate_synthetic_desk_dataset(counts, 64, 99, tmp_path / "b")
        for lbl in ClassLabel:
            for f in sorted((tmp_path / "a" / lbl.name).glob("*.png")):
                other = tmp_path / "b" / lbl.name / f.name
                a = np.asarray(Image.open(f))
                b = np.asarray(Image.open(other))
                assert np.array_equal(a, b)

    def test_size_floor(self, tmp_path):
        with pytest.raises(DatasetError):
            generate_synthetic_desk_dataset({}, 16, 0, tmp_path)

    def test_classes_learnable_by_nearest_neighbor(self, tmp_path):
        counts = {lbl: 120 for lbl in ClassLabel}
        generate_synthetic_desk_dataset(counts, 64, 42, tmp_path)
        report = scan_dataset(tmp_path)
        cache = PixelCache()
        xtr, ytr, xte, yte = [], [], [], []
        for m in report.manifests:
            for r in m.records[:90]:
                xtr.append(cache.get(r.path).astype(np.float32).ravel())
                ytr.append(int(r.label))
            for r in m.records[90:]:
                xte.append(cache.get(r.path).astype(np.float32).ravel())
                yte.append(int(r.label))
        xtr, xte = np.stack(xtr), np.stack(xte)
        ytr, yte = np.array(ytr), np.array(yte)
        d2 = ((xte ** 2).sum(1)[:, None] - 2 * xte @ xtr.T
              + (xtr ** 2).sum(1)[None, :])
        votes = ytr[np.argsort(d2, axis=1)[:, :5]]
        preds = np.array([np.bincount(v, minlength=5).argmax() for v in votes])
        accuracy = (preds == yte).mean()
        assert accuracy > 0.70, f"5-NN accuracy {accuracy:.2%}"


class TestLoadBatch:
    def _png(self, tmp_path, value, name="img.png"):
        path = tmp_path / name
        Image.fromarray(np.full((8, 8), value, np.uint8), "L").save(path)
        return ImageRecord(str(path), ClassLabel.Normal)

    def test_black_maps_to_minus_one_symmetric(self, tmp_path):
        rec = self._png(tmp_path, 0)
        x, labels = load_batch([rec], "symmetric")
        assert np.all(x.data == -1.0)
        assert labels.tolist() == [int(ClassLabel.Normal)]

    def test_white_maps_to_one_unit(self, tmp_path):
        rec = self._png(tmp_path, 255)
        x, _ = load_batch([rec], "unit")
        assert np.all(x.data == 1.0)

    def test_write_then_load_quantization_bound(self, tmp_path, rng):
        from ganbalance.gan import images_to_u8

        float_img = rng.uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32)
        u8 = images_to_u8(float_img)
        path = tmp_path / "gen.png"
        Image.fromarray(u8[0], "L").save(path)
        x, _ = load_batch([ImageRecord(str(path), ClassLabel.Normal)], "symmetric")
        assert np.abs(x.data[0, 0] - float_img[0, 0]).max() <= 1 / 255 + 1e-7

    def test_unknown_normalization_rejected(self, tmp_path):
        rec = self._png(tmp_path, 7)
        with pytest.raises(ValueError):
            load_batch([rec], "zscore")

    def test_decode_failure_names_path(self, tmp_path):
        bad = tmp_path / "corrupt.png"
        bad.write_bytes(b"xx")
        with pytest.raises(DatasetError, match="corrupt.png"):
            load_batch([ImageRecord(str(bad), ClassLabel.Normal)], "unit")
