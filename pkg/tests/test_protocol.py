import json

import numpy as np
import pytest

from lfrecog import protocol
from lfrecog.protocol import (
    CANONICAL_TAGS,
    DatasetManifest,
    ManifestError,
    ManifestRecord,
    PhaseTimer,
    TASK_GROUPS,
    description_size,
    evaluate,
    load_manifest,
    save_manifest,
    split_protocol1,
    split_protocol2,
    timing_report,
)
from lfrecog.selection import parse_topology


def make_manifest(n_subjects, sessions=(1, 2), tags=CANONICAL_TAGS):
    subject_ids = [f"s{idx:03d}" for idx in range(n_subjects)]
    records = []
    for sid in subject_ids:
        for session in sessions:
            for tag in tags:
                records.append(ManifestRecord(
                    subject=sid, session=session, tag=tag,
                    crop=(0, 0, 8, 8),
                    embedding_image_id=f"{sid}/s{session}/{tag}",
                ))
    return DatasetManifest(subject_ids=subject_ids, records=records)


class TestVocabulary:
    def test_twenty_tags(self):
        assert len(CANONICAL_TAGS) == 20
        assert len(set(CANONICAL_TAGS)) == 20

    def test_task_groups_partition_tags(self):
        grouped = [t for tags in TASK_GROUPS.values() for t in tags]
        assert sorted(grouped) == sorted(CANONICAL_TAGS)

    def test_neutral_joined_to_emotion(self):
        assert set(TASK_GROUPS["Neutral & Emotion"]) == {
            "neutral", "happy", "angry", "surprise"
        }


class TestProtocol1:
    def test_counts_100_subjects(self):
        split = split_protocol1(make_manifest(100))
        assert len(split.train) == 100
        assert len(split.validation) == 200
        assert len(split.test) == 2000

    def test_counts_single_subject(self):
        split = split_protocol1(make_manifest(1))
        assert (len(split.train), len(split.validation), len(split.test)) == (1, 2, 20)

    def test_train_is_session1_neutral(self):
        split = split_protocol1(make_manifest(3))
        assert all(r.session == 1 and r.tag == "neutral" for r in split.train)
        assert all(r.session == 1 for r in split.validation)
        assert {r.tag for r in split.validation} == {
            "left-half-profile", "right-half-profile"
        }
        assert all(r.session == 2 for r in split.test)

    def test_missing_session2_rejected(self):
        with pytest.raises(ManifestError, match="session 2"):
            split_protocol1(make_manifest(2, sessions=(1,)))

    def test_disjoint(self):
        split = split_protocol1(make_manifest(4))
        ids = lambda part: {(r.subject, r.session, r.tag) for r in part}
        assert not ids(split.train) & ids(split.validation)
        assert not ids(split.train) & ids(split.test)
        assert not ids(split.validation) & ids(split.test)


class TestProtocol2:
    def test_counts_100_subjects(self):
        split = split_protocol2(make_manifest(100))
        assert len(split.train) == 2000
        assert len(split.validation) == 1000
        assert len(split.test) == 1000

    def test_counts_2_subjects(self):
        split = split_protocol2(make_manifest(2))
        assert (len(split.train), len(split.validation), len(split.test)) == (40, 20, 20)

    def test_halves_disjoint_and_exhaustive(self):
        split = split_protocol2(make_manifest(3))
        for sid in ("s000", "s001", "s002"):
            val_tags = {r.tag for r in split.validation if r.subject == sid}
            test_tags = {r.tag for r in split.test if r.subject == sid}
            assert len(val_tags) == 10 and len(test_tags) == 10
            assert not val_tags & test_tags
            assert val_tags | test_tags == set(CANONICAL_TAGS)

    def test_alternating_rule(self):
        split = split_protocol2(make_manifest(1))
        val_tags = [r.tag for r in split.validation]
        assert val_tags == [CANONICAL_TAGS[i] for i in range(0, 20, 2)]

    def test_missing_tag_rejected(self):
        manifest = make_manifest(2)
        manifest.records = [r for r in manifest.records
                            if not (r.session == 1 and r.tag == "hat")]
        with pytest.raises(ManifestError, match="hat"):
            split_protocol2(manifest)


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        manifest = make_manifest(2)
        save_manifest(tmp_path / "m.json", manifest)
        loaded = load_manifest(tmp_path / "m.json")
        assert loaded.subject_ids == manifest.subject_ids
        assert len(loaded.records) == len(manifest.records)
        key = lambda r: (r.subject, r.session, r.tag)
        assert sorted(map(key, loaded.records)) == sorted(map(key, manifest.records))

    def test_unknown_tag_rejected(self, tmp_path):
        doc = {"subjects": [{"id": "x", "sessions": {"1": [
            {"tag": "winking", "crop": [0, 0, 4, 4]}
        ]}}]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="winking"):
            load_manifest(tmp_path / "m.json")


class PassThroughModel:
    """Treats each description directly as the hidden state."""

    def __init__(self, head):
        self.head = head

    @property
    def class_count(self):
        return self.head.class_count

    def hidden_states(self, descs, branch=0):
        return np.asarray(descs, dtype=np.float64)

    def head_for(self, branch=0):
        return self.head


class LookupBackend:
    """Maps image ids straight to per-subject one-hot-ish vectors."""

    def __init__(self, subject_ids, dim, strength=8.0):
        self.index = {sid: i for i, sid in enumerate(sorted(subject_ids))}
        self.dim = dim
        self.strength = strength
        self.input_h = self.input_w = 0

    def describe(self, pixels, image_id, u, v):
        from lfrecog.descriptor import SpatialDescription
        sid = image_id.split("/")[0]
        vec = np.zeros(self.dim)
        vec[self.index[sid]] = self.strength
        return SpatialDescription(vec)


class TestEvaluate:
    def _run(self, head_scale):
        from lfrecog.classify import SoftmaxHead
        manifest = make_manifest(3)
        split = split_protocol2(manifest)
        n = 3
        backend = LookupBackend(manifest.subject_ids, n)
        head = SoftmaxHead(np.eye(n) * head_scale, np.zeros(n))
        model = PassThroughModel(head)
        grid = (3, 3, np.ones((3, 3), bool))
        return evaluate(
            model, split.test, parse_topology("low-h"), backend,
            manifest.subject_index(), grid=grid,
        )

    def test_perfect_model_scores_100_everywhere(self):
        result = self._run(head_scale=5.0)
        assert result.average == 1.0
        for group in TASK_GROUPS:
            assert result.per_task[group] == 1.0
        assert result.rank_curve[0] == 1.0

    def test_constant_model_matches_enumeration(self):
        # zero head -> uniform scores -> argmax tie-breaks to class 0
        result = self._run(head_scale=0.0)
        assert result.average == pytest.approx(1 / 3)
        assert result.rank_curve[-1] == 1.0

    def test_average_is_image_weighted(self):
        result = self._run(head_scale=5.0)
        counts = {g: len(tags) for g, tags in TASK_GROUPS.items()}
        # protocol-2 halves split every group in half per subject, so weights
        # follow the tag counts; with a perfect model both aggregations agree
        weighted = sum(
            result.per_task[g] * counts[g] for g in TASK_GROUPS
        ) / sum(counts.values())
        assert result.average == pytest.approx(weighted)


class TestTiming:
    def test_description_sizes(self):
        assert description_size(parse_topology("mid-hv-scan"), 256, 15, 15) == 7680
        assert description_size(parse_topology("mid-hv-fuse"), 256, 15, 15) == 7680
        assert description_size(parse_topology("low-h"), 4, 15, 15) == 12

    def test_report_totals(self):
        timer = PhaseTimer()
        timer.add("spatial", 2.0)
        timer.add("angular", 1.0)
        timer.add("classification", 0.5)
        report = timing_report(timer, 10, parse_topology("mid-h"), 8, 15, 15)
        assert report.total() == pytest.approx(3.5)
        assert report.per_image()["spatial"] == pytest.approx(0.2)
        assert report.description_elements == 15 * 8
        assert report.description_bytes == 15 * 8 * 4
