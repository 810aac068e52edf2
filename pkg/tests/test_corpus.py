"""Filter rules, storage resizing, manifests, and the toy dataset generator."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilip.corpus import (CorpusError, FilterConfig, FilterReason, PairRecord,
                          default_nsfw_prompts, filter_pair, filter_records,
                          read_manifest, resize_for_store, write_filter_report,
                          write_manifest)
from bilip.toydata import (MAX_CONCEPTS, ToyDataError, concept_table,
                           generate_toy_dataset)

CFG = FilterConfig()
REC = PairRecord(image_ref="img/0.png", caption="a cat", language="en", source="test")


class TestFilterRules:
    @pytest.mark.parametrize("dims,sim,nsfw,keep,reason", [
        ((512, 512), 0.30, 0.10, True, FilterReason.KEPT),
        ((512, 512), 0.20, 0.10, False, FilterReason.LOW_SIMILARITY),
        ((512, 512), 0.30, 0.25, False, FilterReason.NSFW),
        ((20, 512), 0.99, 0.00, False, FilterReason.TOO_SMALL),
    ])
    def test_verdict_table(self, dims, sim, nsfw, keep, reason):
        verdict = filter_pair(REC, dims, sim, nsfw, CFG)
        assert verdict.keep is keep
        assert verdict.reason is reason

    def test_boundary_exactly_at_thresholds(self):
        # similarity threshold is exclusive below, NSFW exclusive above:
        # a pair sitting exactly on either threshold is kept
        assert filter_pair(REC, (64, 64), 0.28, 0.10, CFG).keep
        assert filter_pair(REC, (64, 64), 0.50, 0.22, CFG).keep
        assert not filter_pair(REC, (64, 64), np.nextafter(0.28, -1), 0.10, CFG).keep
        assert not filter_pair(REC, (64, 64), 0.50, np.nextafter(0.22, 1), CFG).keep

    def test_drop_order_size_then_similarity_then_nsfw(self):
        failing_all = filter_pair(REC, (10, 10), -0.5, 0.9, CFG)
        assert failing_all.reason is FilterReason.TOO_SMALL
        failing_two = filter_pair(REC, (64, 64), -0.5, 0.9, CFG)
        assert failing_two.reason is FilterReason.LOW_SIMILARITY

    @settings(max_examples=80, deadline=None)
    @given(sim=st.floats(-1, 1), bump=st.floats(0, 0.5))
    def test_monotone_in_similarity(self, sim, bump):
        kept_low = filter_pair(REC, (64, 64), sim, 0.0, CFG).keep
        kept_high = filter_pair(REC, (64, 64), min(sim + bump, 1.0), 0.0, CFG).keep
        if kept_low:
            assert kept_high

    @settings(max_examples=80, deadline=None)
    @given(nsfw=st.floats(-1, 1), bump=st.floats(0, 0.5))
    def test_antitone_in_nsfw(self, nsfw, bump):
        kept_high = filter_pair(REC, (64, 64), 0.9, min(nsfw + bump, 1.0), CFG).keep
        kept_low = filter_pair(REC, (64, 64), 0.9, nsfw, CFG).keep
        if kept_high:
            assert kept_low

    def test_verdict_consistency_enforced(self):
        from bilip.corpus import FilterVerdict
        with pytest.raises(CorpusError):
            FilterVerdict(keep=True, reason=FilterReason.NSFW)

    def test_default_nsfw_prompts_nonempty(self):
        prompts = default_nsfw_prompts()
        assert prompts
        assert all(p.strip() for p in prompts)


class TestResizeForStore:
    def test_square_downscale(self):
        out = resize_for_store(np.random.default_rng(0).random((512, 512, 3)))
        assert out.shape == (256, 256, 3)

    def test_identity_at_store_size(self):
        image = np.random.default_rng(1).random((256, 256, 3))
        np.testing.assert_array_equal(resize_for_store(image), image)

    def test_wide_image_center_cropped(self):
        # 300 wide, 256 tall: shorter side already at store size, so the
        # resize is the identity and 22 columns fall off each side
        image = np.random.default_rng(2).random((256, 300, 3))
        out = resize_for_store(image)
        np.testing.assert_array_equal(out, image[:, 22:278])

    def test_undersized_rejected(self):
        with pytest.raises(CorpusError):
            resize_for_store(np.zeros((20, 512, 3)))

    @pytest.mark.parametrize("h,w", [(64, 640), (999, 501), (256, 257)])
    def test_output_square_regardless_of_aspect(self, h, w):
        out = resize_for_store(np.zeros((h, w, 3)))
        assert out.shape == (256, 256, 3)


class TestRecordsAndManifest:
    def test_blank_caption_rejected(self):
        with pytest.raises(CorpusError):
            PairRecord(image_ref="x", caption="   ", language="en")

    def test_unknown_language_rejected(self):
        with pytest.raises(CorpusError):
            PairRecord(image_ref="x", caption="ok", language="fr")

    def test_manifest_roundtrip(self, tmp_path):
        records = [
            PairRecord("a.png", "a red circle", "en", "unit"),
            PairRecord("b.png", "고양이", "ko", "unit"),
        ]
        path = tmp_path / "manifest.tsv"
        write_manifest(records, path)
        assert read_manifest(path) == records
        raw = path.read_bytes()
        assert b"\r" not in raw and raw.count(b"\t") == 6

    def test_tab_in_field_rejected(self, tmp_path):
        rec = PairRecord("a.png", "has\ttab", "en", "unit")
        with pytest.raises(CorpusError):
            write_manifest([rec], tmp_path / "m.tsv")

    def test_filter_report_jsonl(self, tmp_path):
        path = tmp_path / "report.jsonl"
        write_filter_report([("a.png", FilterReason.KEPT),
                             ("b.png", FilterReason.NSFW)], path)
        lines = path.read_text().splitlines()
        assert [json.loads(l) for l in lines] == [
            {"image_ref": "a.png", "reason": "kept"},
            {"image_ref": "b.png", "reason": "nsfw"},
        ]

    def test_filter_records_pipeline(self):
        records = [
            PairRecord("keep.png", "ok", "en"),
            PairRecord("small.png", "ok", "en"),
            PairRecord("lowsim.png", "ok", "en"),
        ]
        scores = {
            "keep.png": ((64, 64), 0.5, 0.0),
            "small.png": ((8, 64), 0.5, 0.0),
            "lowsim.png": ((64, 64), 0.1, 0.0),
        }
        kept, report = filter_records(records, lambda r: scores[r.image_ref], CFG)
        assert [r.image_ref for r in kept] == ["keep.png"]
        assert [reason for _, reason in report] == [
            FilterReason.KEPT, FilterReason.TOO_SMALL, FilterReason.LOW_SIMILARITY]


class TestToyDataset:
    def test_counts(self):
        data = generate_toy_dataset(2, 4, seed=1)
        assert data.num_images == 8
        assert len(data.records) == 16

    def test_each_image_has_one_record_per_language(self):
        data = generate_toy_dataset(3, 5, seed=2)
        by_ref = {}
        for rec in data.records:
            by_ref.setdefault(rec.image_ref, []).append(rec.language)
        assert all(sorted(v) == ["synthetic-A", "synthetic-B"]
                   for v in by_ref.values())

    def test_language_vocabularies_disjoint(self):
        data = generate_toy_dataset(8, 8, seed=0)
        words_a, words_b = set(), set()
        for rec in data.records:
            target = words_a if rec.language == "synthetic-A" else words_b
            target.update(rec.caption.split())
        assert words_a and words_b
        assert not words_a & words_b

    def test_determinism_byte_identical_manifests(self, tmp_path):
        generate_toy_dataset(8, 64, seed=0, out_dir=tmp_path / "run1")
        generate_toy_dataset(8, 64, seed=0, out_dir=tmp_path / "run2")
        m1 = (tmp_path / "run1" / "manifest.tsv").read_bytes()
        m2 = (tmp_path / "run2" / "manifest.tsv").read_bytes()
        assert m1 == m2
        img = "images/concept03_0017.png"
        assert (tmp_path / "run1" / img).read_bytes() == (tmp_path / "run2" / img).read_bytes()

    def test_different_seeds_differ(self):
        d0 = generate_toy_dataset(2, 2, seed=0)
        d1 = generate_toy_dataset(2, 2, seed=1)
        assert not np.array_equal(d0.images, d1.images)

    def test_too_many_concepts_rejected(self):
        with pytest.raises(ToyDataError):
            generate_toy_dataset(MAX_CONCEPTS + 1, 1, seed=0)

    def test_concept_table_unique_and_attribute_distinct(self):
        table = concept_table(8)
        assert len(set(table)) == 8
        shapes = [s for s, _ in table]
        colors = [c for _, c in table]
        assert len(set(shapes)) == 8 and len(set(colors)) == 8
        assert len(set(concept_table(64))) == 64

    def test_images_in_unit_range(self):
        data = generate_toy_dataset(4, 4, seed=3)
        assert data.images.min() >= 0.0 and data.images.max() <= 1.0
