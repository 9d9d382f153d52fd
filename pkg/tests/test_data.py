import json

import numpy as np
import pytest
from PIL import Image

from settledamage import data as io
from settledamage.damage import CurvePoint, DamageReport, SegmentationMask, change_rate
from settledamage.errors import ConfigError, DataIOError, ManifestError, UsageError
from settledamage.networks import DISASTER, NON_DISASTER
from settledamage.severity import DisasterEvent


def write_png(path, arr, mode):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode).save(path, format="PNG")
    return path


@pytest.fixture
def case_dir(tmp_path):
    for name in ("a_pre", "a_post", "b_pre", "b_post"):
        write_png(tmp_path / f"{name}.png", np.zeros((4, 4, 3)), "RGB")
    write_png(tmp_path / "a_mask.png", np.zeros((4, 4)), "L")
    return tmp_path


def manifest(**extra):
    cases = [{"id": "a", "pre_image": "a_pre.png", "post_image": "a_post.png", "pre_mask": "a_mask.png",
              "post_mask": "a_mask.png", "econ_loss_bn": 1.5, "deaths": 3, "category": "earthquake"},
             {"id": "b", "pre_image": "b_pre.png", "post_image": "b_post.png"}]
    doc = {"schema_version": 1, "cases": cases, "splits": {"train": ["a"], "val": ["b"]}}
    doc.update(extra)
    return doc


def dump(path, doc):
    path.write_text(json.dumps(doc))
    return path


class TestImages:
    def test_white_and_black_pixel(self, tmp_path):
        white = io.load_image(write_png(tmp_path / "w.png", [[[255, 255, 255]]], "RGB"))
        black = io.load_image(write_png(tmp_path / "k.png", [[[0, 0, 0]]], "RGB"))
        assert white.shape == (1, 3, 1, 1) and white.dtype == np.float32
        assert np.all(white == 1.0) and np.all(black == 0.0)

    def test_layout_and_channel_order(self, tmp_path):
        px = [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [51, 102, 153]]]
        img = io.load_image(write_png(tmp_path / "c.png", px, "RGB"))
        assert img.shape == (1, 3, 2, 2)
        np.testing.assert_array_equal(img[0, :, 0, 0], [1, 0, 0])
        np.testing.assert_array_equal(img[0, :, 0, 1], [0, 1, 0])
        np.testing.assert_array_equal(img[0, :, 1, 0], [0, 0, 1])
        np.testing.assert_allclose(img[0, :, 1, 1], [0.2, 0.4, 0.6], rtol=1e-6)

    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).integers(0, 256, (3, 5, 7)) / 255.0
        io.save_image(arr, tmp_path / "r.png")
        np.testing.assert_allclose(io.load_image(tmp_path / "r.png")[0], arr, atol=1e-7)

    def test_errors(self, tmp_path):
        with pytest.raises(DataIOError):
            io.load_image(tmp_path / "missing.png")
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
        with pytest.raises(DataIOError):
            io.load_image(tmp_path / "bad.png")
        Image.new("RGB", (2, 2)).save(tmp_path / "x.jpg", format="JPEG")
        with pytest.raises(DataIOError):
            io.load_image(tmp_path / "x.jpg")

    def test_mask_round_trip(self, tmp_path):
        labels = np.random.default_rng(1).integers(0, 2, (6, 5))
        io.save_mask(SegmentationMask(labels), tmp_path / "m.png")
        assert np.array(Image.open(tmp_path / "m.png")).max() == 255
        assert io.load_mask(tmp_path / "m.png") == SegmentationMask(labels)


class TestManifest:
    def test_load(self, case_dir):
        m = io.load_manifest(dump(case_dir / "m.json", manifest()))
        assert [c.event.id for c in m.cases] == ["a", "b"]
        assert m.cases[0].has_masks and not m.cases[1].has_masks
        assert m.cases[0].event.econ_loss_bn == 1.5
        assert [c.event.id for c in m.split("val")] == ["b"]

    def test_round_trip(self, case_dir):
        m = io.load_manifest(dump(case_dir / "m.json", manifest()))
        io.save_manifest(m, case_dir / "again.json")
        first = (case_dir / "again.json").read_bytes()
        m2 = io.load_manifest(case_dir / "again.json")
        assert m2 == m
        io.save_manifest(m2, case_dir / "again.json")
        assert (case_dir / "again.json").read_bytes() == first

    @pytest.mark.parametrize("mutate,code", [
        (lambda d: d.pop("cases"), ManifestError.SCHEMA),
        (lambda d: d.update(schema_version=2), ManifestError.SCHEMA),
        (lambda d: d["cases"][0].update(deaths=-1), ManifestError.SCHEMA),
        (lambda d: d["cases"][0].update(extra=1), ManifestError.SCHEMA),
        (lambda d: d["cases"][1].update(id="a"), ManifestError.DUPLICATE_ID),
        (lambda d: d["splits"].update(test=["a"]), ManifestError.SPLIT_OVERLAP),
        (lambda d: d["splits"].update(test=["zzz"]), ManifestError.SCHEMA),
        (lambda d: d["cases"][1].update(pre_image="nope.png"), ManifestError.MISSING_ASSET),
    ])
    def test_errors(self, case_dir, mutate, code):
        doc = manifest()
        mutate(doc)
        with pytest.raises(ManifestError) as info:
            io.load_manifest(dump(case_dir / "m.json", doc))
        assert info.value.code == code
        assert info.value.exit_code == 2

    def test_missing_and_invalid_json(self, tmp_path):
        with pytest.raises(ManifestError) as info:
            io.load_manifest(tmp_path / "none.json")
        assert info.value.code == ManifestError.MISSING_FILE
        (tmp_path / "m.json").write_text("{")
        with pytest.raises(ManifestError):
            io.load_manifest(tmp_path / "m.json")

    def test_split_ids(self):
        ids = [str(i) for i in range(10)]
        s = io.split_ids(ids, 0.2, 0.1)
        assert s == {"train": ids[:7], "val": ids[7:9], "test": ids[9:]}
        assert io.split_ids(["x"], 0.5) == {"train": ["x"], "val": [], "test": []}

    def test_parser_needs_masks(self, case_dir):
        m = io.load_manifest(dump(case_dir / "m.json", manifest()))
        with pytest.raises(UsageError):
            io.manifest_dataset(m.cases, "parser")
        ds = io.manifest_dataset(m.cases, "classifier")
        assert ds.targets.tolist() == [NON_DISASTER, DISASTER] * 2


class TestTables:
    def test_events_round_trip(self, tmp_path):
        events = [DisasterEvent("1", "Quake, big", "2010-01-12", "Haiti", 8.0, 222570, "earthquake"),
                  DisasterEvent("2", "Blast", "2020-08-04", "Port district", 12.5, 218, None)]
        io.save_events(events, tmp_path / "e.csv")
        assert io.load_events(tmp_path / "e.csv") == events

    def test_events_bad(self, tmp_path):
        (tmp_path / "e.csv").write_text("id,name\n1,x\n")
        with pytest.raises(ConfigError):
            io.load_events(tmp_path / "e.csv")
        with pytest.raises(DataIOError):
            io.load_events(tmp_path / "missing.csv")

    def test_samples_round_trip(self, tmp_path):
        s = np.random.default_rng(0).random((5, 3))
        io.save_samples(s, tmp_path / "s.csv")
        assert np.array_equal(io.load_samples(tmp_path / "s.csv"), s)

    def test_exports_byte_identical(self, tmp_path):
        rep = DamageReport(0.5, 0.14, 0.72, "severe", 5.941, (5.0, 7.0))
        io.export_report(rep, tmp_path / "a.json")
        io.export_report(rep, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert DamageReport.from_dict(json.loads((tmp_path / "a.json").read_text())) == rep
        curve = [CurvePoint(0.0, 1.0, 0.01), CurvePoint(0.3, 0.9, 0.4)]
        io.export_curve(curve, tmp_path / "c.csv")
        assert io.load_curve(tmp_path / "c.csv") == curve


class TestSynthetic:
    def test_destruction_extremes(self):
        intact = io.generate_synthetic_pair(io.SyntheticSceneSpec(destruction=0.0), seed=1)
        assert intact.erased_fraction == 0.0
        assert np.array_equal(intact.pre_image, intact.post_image)
        assert intact.pre_mask == intact.post_mask
        gone = io.generate_synthetic_pair(io.SyntheticSceneSpec(destruction=1.0), seed=1)
        assert gone.erased_fraction == 1.0 and not gone.post_mask.labels.any()
        assert change_rate(gone.pre_mask, gone.post_mask) == 1.0

    def test_half_destruction_within_a_row(self):
        for seed in range(20):
            p = io.generate_synthetic_pair(io.SyntheticSceneSpec(destruction=0.5), seed=seed)
            widest = max(w for _, _, _, w in p.pre_rects)
            total = p.pre_mask.labels.sum()
            assert abs(p.erased_fraction - 0.5) <= widest / 2 / total + 1e-12
            assert change_rate(p.pre_mask, p.post_mask) == pytest.approx(p.erased_fraction, abs=1e-12)

    def test_masks_match_rects(self):
        p = io.generate_synthetic_pair(io.SyntheticSceneSpec(), seed=3)
        for rects, mask in ((p.pre_rects, p.pre_mask), (p.post_rects, p.post_mask)):
            assert mask.labels.sum() == sum(h * w for _, _, h, w in rects)
        # destruction only removes built pixels
        assert not (p.post_mask.labels & ~p.pre_mask.labels.astype(bool)).any()

    def test_deterministic(self):
        a = io.synthetic_corpus(3, seed=5, destruction=(0.4, 0.9))
        b = io.synthetic_corpus(3, seed=5, destruction=(0.4, 0.9))
        for x, y in zip(a, b):
            assert np.array_equal(x.post_image, y.post_image) and x.post_mask == y.post_mask

    def test_image_range(self):
        p = io.generate_synthetic_pair(io.SyntheticSceneSpec(), seed=0)
        assert p.pre_image.shape == (3, 64, 64) and p.pre_image.dtype == np.float32
        assert 0 <= p.post_image.min() and p.post_image.max() <= 1

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            io.generate_synthetic_pair(io.SyntheticSceneSpec(destruction=1.5))
        with pytest.raises(ConfigError):
            io.generate_synthetic_pair(io.SyntheticSceneSpec(image_size=8))

    def test_datasets(self):
        pairs = io.synthetic_corpus(3, seed=0)
        cls = io.classifier_dataset(pairs)
        assert cls.targets.tolist() == [NON_DISASTER] * 3 + [DISASTER] * 3
        seg = io.parser_dataset(pairs)
        assert seg.targets.shape == (6, 64, 64)

    def test_write_dataset(self, tmp_path):
        path = io.write_synthetic_dataset(tmp_path / "ds", 4, io.SyntheticSceneSpec(destruction=0.5), seed=2)
        m = io.load_manifest(path)
        assert len(m.cases) == 4 and all(c.has_masks for c in m.cases)
        pairs = io.synthetic_corpus(4, seed=2, destruction=0.5)
        assert io.load_mask(m.cases[0].post_mask) == pairs[0].post_mask
        np.testing.assert_allclose(io.load_image(m.cases[0].pre_image)[0], pairs[0].pre_image, atol=0.5 / 255 + 1e-6)
