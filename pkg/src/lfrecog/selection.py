"""Sub-aperture view selection topologies and scanning orders.

Each topology turns the grid dims plus vignette mask into one ordered view
sequence, or two for the score-fusion variants (independent horizontal and
vertical branches)."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class SelectionError(Exception):
    pass


class Kind(Enum):
    HIGH_DENSITY = "high"
    MAX_DISPARITY = "corner"
    MID_H = "mid-h"
    MID_V = "mid-v"
    MID_HV = "mid-hv"
    LOW_H = "low-h"
    LOW_V = "low-v"
    LOW_HV = "low-hv"


@dataclass(frozen=True)
class Topology:
    kind: Kind
    snake: bool = False          # high-density only: snake vs row-major scan
    score_fusion: bool = False   # hv kinds only: two branches vs combined scan


# CLI/config vocabulary, one name per topology row.
TOPOLOGY_NAMES = {
    "high-row": Topology(Kind.HIGH_DENSITY, snake=False),
    "high-snake": Topology(Kind.HIGH_DENSITY, snake=True),
    "corner": Topology(Kind.MAX_DISPARITY),
    "mid-h": Topology(Kind.MID_H),
    "mid-v": Topology(Kind.MID_V),
    "mid-hv-scan": Topology(Kind.MID_HV, score_fusion=False),
    "mid-hv-fuse": Topology(Kind.MID_HV, score_fusion=True),
    "low-h": Topology(Kind.LOW_H),
    "low-v": Topology(Kind.LOW_V),
    "low-hv-scan": Topology(Kind.LOW_HV, score_fusion=False),
    "low-hv-fuse": Topology(Kind.LOW_HV, score_fusion=True),
}


def parse_topology(name):
    try:
        return TOPOLOGY_NAMES[name]
    except KeyError:
        raise SelectionError(
            f"unknown topology {name!r}; choose from {sorted(TOPOLOGY_NAMES)}"
        ) from None


@dataclass
class ViewSequence:
    positions: list  # ordered (u, v) grid coordinates
    label: str

    def __len__(self):
        return len(self.positions)


def _subgrid_indices(n):
    # Alternate views, skipping the vignette-prone border on real-size grids;
    # tiny grids keep everything.
    if n < 5:
        return list(range(n))
    return list(range(1, n - 1, 2))


def _require_center(views_u, views_v, kind):
    if views_u % 2 == 0 or views_v % 2 == 0:
        raise SelectionError(
            f"{kind} needs an odd-dimensioned grid for a well-defined center, "
            f"got {views_u}x{views_v}"
        )
    return views_u // 2, views_v // 2


def _masked(positions, valid_mask, label):
    kept = [(u, v) for (u, v) in positions if valid_mask[u, v]]
    if not kept:
        raise SelectionError(f"{label}: no valid positions after masking")
    return ViewSequence(kept, label)


def _high_density(views_u, views_v, valid_mask, snake):
    rows = _subgrid_indices(views_u)
    cols = _subgrid_indices(views_v)
    positions = []
    for i, u in enumerate(rows):
        row_cols = cols if (not snake or i % 2 == 0) else cols[::-1]
        positions.extend((u, v) for v in row_cols)
    label = "high-snake" if snake else "high-row"
    return _masked(positions, valid_mask, label)


def _outer_ring(views_u, views_v):
    ring = [(0, v) for v in range(views_v)]
    ring += [(u, views_v - 1) for u in range(1, views_u)]
    ring += [(views_u - 1, v) for v in range(views_v - 2, -1, -1)]
    ring += [(u, 0) for u in range(views_u - 2, 0, -1)]
    return ring


def _mid_row(views_u, views_v, valid_mask):
    cu, _ = _require_center(views_u, views_v, "mid-h")
    return _masked([(cu, v) for v in range(views_v)], valid_mask, "mid-h")


def _mid_col(views_u, views_v, valid_mask):
    _, cv = _require_center(views_u, views_v, "mid-v")
    return _masked([(u, cv) for u in range(views_u)], valid_mask, "mid-v")


def _low_h(views_u, views_v, valid_mask):
    cu, cv = _require_center(views_u, views_v, "low-h")
    row_cols = [v for v in range(views_v) if valid_mask[cu, v]]
    if not row_cols or not valid_mask[cu, cv]:
        raise SelectionError("low-h: center row fully masked")
    return ViewSequence([(cu, row_cols[0]), (cu, cv), (cu, row_cols[-1])], "low-h")


def _low_v(views_u, views_v, valid_mask):
    cu, cv = _require_center(views_u, views_v, "low-v")
    col_rows = [u for u in range(views_u) if valid_mask[u, cv]]
    if not col_rows or not valid_mask[cu, cv]:
        raise SelectionError("low-v: center column fully masked")
    return ViewSequence([(col_rows[0], cv), (cu, cv), (col_rows[-1], cv)], "low-v")


def select_views(topology, views_u, views_v, valid_mask=None):
    """Return the ordered view sequence(s) for a topology.

    Single-branch topologies yield a one-element list; score-fusion variants
    yield [horizontal, vertical] for independent model runs.
    """
    if valid_mask is None:
        valid_mask = np.ones((views_u, views_v), dtype=bool)
    k = topology.kind
    if k is Kind.HIGH_DENSITY:
        return [_high_density(views_u, views_v, valid_mask, topology.snake)]
    if k is Kind.MAX_DISPARITY:
        return [_masked(_outer_ring(views_u, views_v), valid_mask, "corner")]
    if k is Kind.MID_H:
        return [_mid_row(views_u, views_v, valid_mask)]
    if k is Kind.MID_V:
        return [_mid_col(views_u, views_v, valid_mask)]
    if k is Kind.MID_HV:
        h = _mid_row(views_u, views_v, valid_mask)
        v = _mid_col(views_u, views_v, valid_mask)
        if topology.score_fusion:
            h.label, v.label = "mid-hv-fuse/h", "mid-hv-fuse/v"
            return [h, v]
        return [ViewSequence(h.positions + v.positions, "mid-hv-scan")]
    if k is Kind.LOW_H:
        return [_low_h(views_u, views_v, valid_mask)]
    if k is Kind.LOW_V:
        return [_low_v(views_u, views_v, valid_mask)]
    if k is Kind.LOW_HV:
        h = _low_h(views_u, views_v, valid_mask)
        v = _low_v(views_u, views_v, valid_mask)
        if topology.score_fusion:
            h.label, v.label = "low-hv-fuse/h", "low-hv-fuse/v"
            return [h, v]
        return [ViewSequence(h.positions + v.positions, "low-hv-scan")]
    raise SelectionError(f"unhandled topology kind {k}")


def sequence_length(topology, views_u, views_v, valid_mask=None):
    """Length of the selection; a tuple of per-branch lengths for fusion."""
    seqs = select_views(topology, views_u, views_v, valid_mask)
    if len(seqs) == 1:
        return len(seqs[0])
    return tuple(len(s) for s in seqs)
