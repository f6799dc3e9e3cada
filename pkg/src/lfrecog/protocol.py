"""Dataset manifests, the two evaluation protocols, and metric/timing tables.

A manifest describes subjects × two acquisition sessions × 20 tagged
variations, each with either an SA container path or an embedding image id,
plus the face crop box taken on the central view."""

import csv
import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify, descriptor, lightfield, selection

# Canonical variation vocabulary; order drives the Protocol 2 half split.
CANONICAL_TAGS = (
    "neutral",
    "happy", "angry", "surprise",
    "eyes-closed", "mouth-open",
    "look-up", "look-down",
    "right-half-profile", "right-profile",
    "left-half-profile", "left-profile",
    "high-illum", "low-illum",
    "hand-on-eye", "hand-on-mouth", "glasses", "sunglasses", "mask", "hat",
)

TASK_GROUPS = {
    "Neutral & Emotion": ("neutral", "happy", "angry", "surprise"),
    "Action": ("eyes-closed", "mouth-open"),
    "Pose": ("look-up", "look-down", "right-half-profile", "right-profile",
             "left-half-profile", "left-profile"),
    "Illumination": ("high-illum", "low-illum"),
    "Occlusion": ("hand-on-eye", "hand-on-mouth", "glasses", "sunglasses",
                  "mask", "hat"),
}

_TAG_TO_GROUP = {t: g for g, tags in TASK_GROUPS.items() for t in tags}


class ManifestError(Exception):
    pass


@dataclass
class ManifestRecord:
    subject: str
    session: int
    tag: str
    crop: tuple  # (left, top, width, height)
    sa_container: str = ""
    embedding_image_id: str = ""

    @property
    def image_id(self):
        return self.embedding_image_id or f"{self.subject}/s{self.session}/{self.tag}"


@dataclass
class DatasetManifest:
    subject_ids: list
    records: list  # ManifestRecord

    def by_subject_session(self):
        out = defaultdict(list)
        for rec in self.records:
            out[(rec.subject, rec.session)].append(rec)
        return out

    def subject_index(self):
        return {sid: i for i, sid in enumerate(sorted(self.subject_ids))}


def load_manifest(path):
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
        subjects = doc["subjects"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    subject_ids = []
    records = []
    for subj in subjects:
        sid = str(subj["id"])
        subject_ids.append(sid)
        for sess_key, recs in subj.get("sessions", {}).items():
            session = int(sess_key)
            for rec in recs:
                tag = rec["tag"]
                if tag not in CANONICAL_TAGS:
                    raise ManifestError(f"unknown variation tag {tag!r}")
                container = rec.get("sa_container", "")
                if container:
                    # container paths are relative to the manifest file
                    container = str((base / container).resolve())
                records.append(ManifestRecord(
                    subject=sid,
                    session=session,
                    tag=tag,
                    crop=tuple(rec["crop"]),
                    sa_container=container,
                    embedding_image_id=rec.get("embedding_image_id", ""),
                ))
    return DatasetManifest(subject_ids=subject_ids, records=records)


def save_manifest(path, manifest):
    subjects = []
    grouped = defaultdict(lambda: defaultdict(list))
    for rec in manifest.records:
        entry = {"tag": rec.tag, "crop": list(rec.crop)}
        if rec.sa_container:
            entry["sa_container"] = rec.sa_container
        if rec.embedding_image_id:
            entry["embedding_image_id"] = rec.embedding_image_id
        grouped[rec.subject][str(rec.session)].append(entry)
    for sid in manifest.subject_ids:
        subjects.append({"id": sid, "sessions": dict(grouped[sid])})
    with open(path, "w") as fh:
        json.dump({"subjects": subjects}, fh, indent=1, sort_keys=True)


@dataclass
class Split:
    train: list
    validation: list
    test: list


def _session_index(manifest, session):
    out = defaultdict(dict)
    for rec in manifest.records:
        if rec.session == session:
            out[rec.subject][rec.tag] = rec
    return out


def _require(recs_by_tag, subject, session, tags):
    picked = []
    for tag in tags:
        if tag not in recs_by_tag:
            raise ManifestError(
                f"subject {subject} session {session} is missing tag {tag!r}"
            )
        picked.append(recs_by_tag[tag])
    return picked


def split_protocol1(manifest):
    """Enroll on session-1 neutral only; validate on session-1 half profiles;
    test on every session-2 image."""
    s1 = _session_index(manifest, 1)
    s2 = _session_index(manifest, 2)
    train, val, test = [], [], []
    for sid in manifest.subject_ids:
        train += _require(s1.get(sid, {}), sid, 1, ["neutral"])
        val += _require(
            s1.get(sid, {}), sid, 1, ["left-half-profile", "right-half-profile"]
        )
        test += _require(s2.get(sid, {}), sid, 2, CANONICAL_TAGS)
    return Split(train=train, validation=val, test=test)


def split_protocol2(manifest):
    """Enroll on all 20 session-1 variations; split session 2 into disjoint
    validation/test halves by alternating the canonical tag order."""
    s1 = _session_index(manifest, 1)
    s2 = _session_index(manifest, 2)
    train, val, test = [], [], []
    for sid in manifest.subject_ids:
        train += _require(s1.get(sid, {}), sid, 1, CANONICAL_TAGS)
        session2 = _require(s2.get(sid, {}), sid, 2, CANONICAL_TAGS)
        for idx, rec in enumerate(session2):
            (val if idx % 2 == 0 else test).append(rec)
    return Split(train=train, validation=val, test=test)


def get_split(manifest, protocol_id):
    if protocol_id == 1:
        return split_protocol1(manifest)
    if protocol_id == 2:
        return split_protocol2(manifest)
    raise ManifestError(f"unknown protocol {protocol_id}; choose 1 or 2")


class PhaseTimer:
    """Accumulates wall-clock time per pipeline phase."""

    PHASES = ("spatial", "angular", "classification")

    def __init__(self):
        self.totals = {p: 0.0 for p in self.PHASES}

    def add(self, phase, seconds):
        self.totals[phase] += seconds


def record_branch_descriptions(rec, topology, backend, workers=1,
                               grid=None, timer=None):
    """Per-branch description stacks for one manifest record.

    Container-backed records load, crop, and resize pixels; embedding-backed
    records look up vectors by (image_id, u, v) using the supplied grid dims.
    """
    t0 = time.perf_counter()
    if rec.sa_container:
        array = lightfield.load_sa_container(rec.sa_container)
        box = lightfield.CropBox(*rec.crop)
        array = lightfield.crop_and_resize(
            array, box, backend.input_w, backend.input_h
        )
        views_u, views_v, mask = array.views_u, array.views_v, array.valid_mask
    else:
        if grid is None:
            raise ManifestError(
                f"record {rec.image_id} is embedding-backed; grid dims required"
            )
        views_u, views_v, mask = grid
        array = lightfield.MultiViewSAArray(
            views_u=views_u, views_v=views_v, width=0, height=0,
            valid_mask=np.asarray(mask, dtype=bool), views={},
            image_id=rec.embedding_image_id,
        )
        # embedding lookups never touch pixels
        array.view = lambda u, v: None
    seqs = selection.select_views(topology, views_u, views_v, mask)
    branches = []
    for seq in seqs:
        descs = descriptor.describe_sequence(backend, array, seq, workers=workers)
        branches.append(np.stack([d.values for d in descs]))
    if timer is not None:
        timer.add("spatial", time.perf_counter() - t0)
    return branches


@dataclass
class EvalResult:
    per_task: dict       # task group -> rank-1 accuracy
    average: float       # image-weighted rank-1 over all test images
    rank_curve: list     # rank-k accuracy for k = 1..class_count
    predictions: list    # (image_id, true, predicted, rank_of_true, top1_score)


def evaluate(model, records, topology, backend, class_index, workers=1,
             grid=None, use_last_cell=False, timer=None):
    """Rank-1 per task group plus the overall rank-k curve."""
    group_hits = defaultdict(int)
    group_counts = defaultdict(int)
    score_lists, true_labels, predictions = [], [], []
    for rec in records:
        if rec.tag not in _TAG_TO_GROUP:
            raise ManifestError(f"unknown tag {rec.tag!r}")
        true = class_index[rec.subject]
        branches = record_branch_descriptions(
            rec, topology, backend, workers=workers, grid=grid, timer=timer
        )
        pred, scores = classify.predict(
            model, branches, use_last_cell=use_last_cell, timer=timer
        )
        group = _TAG_TO_GROUP[rec.tag]
        group_counts[group] += 1
        if pred == true:
            group_hits[group] += 1
        score_lists.append(scores)
        true_labels.append(true)
        predictions.append((
            rec.image_id, true, pred,
            classify.rank_of_true(scores, true),
            float(np.max(scores)),
        ))
    per_task = {
        g: (group_hits[g] / group_counts[g]) if group_counts[g] else float("nan")
        for g in TASK_GROUPS
    }
    total = len(records)
    average = sum(group_hits.values()) / total if total else float("nan")
    class_count = model.class_count
    rank_curve = [
        classify.rank_k(score_lists, true_labels, k)
        for k in range(1, class_count + 1)
    ]
    return EvalResult(per_task=per_task, average=average,
                      rank_curve=rank_curve, predictions=predictions)


@dataclass
class TimingReport:
    phase_totals: dict
    image_count: int
    description_elements: int
    description_bytes: int

    def per_image(self):
        return {p: t / self.image_count for p, t in self.phase_totals.items()}

    def total(self):
        return sum(self.phase_totals.values())


def description_size(topology, hidden_dim, views_u, views_v, valid_mask=None):
    """Total hidden-state elements of one sample's description (all branches)."""
    length = selection.sequence_length(topology, views_u, views_v, valid_mask)
    cells = length if isinstance(length, int) else sum(length)
    return cells * hidden_dim


def timing_report(timer, image_count, topology, hidden_dim, views_u, views_v,
                  valid_mask=None):
    elements = description_size(topology, hidden_dim, views_u, views_v, valid_mask)
    return TimingReport(
        phase_totals=dict(timer.totals),
        image_count=image_count,
        description_elements=elements,
        description_bytes=elements * 4,  # stored as float32
    )


def write_task_table_csv(path, result):
    columns = list(TASK_GROUPS) + ["Average"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerow([f"{result.per_task[g]:.4f}" for g in TASK_GROUPS]
                   + [f"{result.average:.4f}"])


def format_task_table(result):
    columns = list(TASK_GROUPS) + ["Average"]
    values = [result.per_task[g] for g in TASK_GROUPS] + [result.average]
    widths = [max(len(c), 8) for c in columns]
    header = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    row = "  ".join(f"{100 * v:.2f}%".ljust(w) for v, w in zip(values, widths))
    return header + "\n" + row
