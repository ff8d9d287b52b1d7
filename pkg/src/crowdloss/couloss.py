"""Work-formula regression regulator for crowded scenes.

Each proposal is attracted by its target box and repelled by overlapping
non-target boxes. Force magnitudes are log-IoU terms, the useful component
is taken via the law of cosines, and the per-triplet contribution is the
mechanical work ``F * cos(theta) * s`` with non-positive work ignored.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from ._diff import ZERO4, border_distance_and_grad, cos_angle_and_grad, iou_and_grad
from .errors import InvalidInputError, NoOverlapError
from .geometry import BBox

AGGREGATION_MODES = ("deduplicated", "triplet-literal")


class KinkWarning(UserWarning):
    """A gradient was evaluated near a non-differentiable point."""


@dataclass(frozen=True)
class CouLossConfig:
    positive_iou_threshold: float = 0.5
    iou_floor: float = 1e-6
    aggregation_mode: str = "deduplicated"
    kink_tolerance: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.positive_iou_threshold < 1.0:
            raise InvalidInputError(
                f"positive_iou_threshold must be in (0, 1), got {self.positive_iou_threshold}"
            )
        if not 0.0 < self.iou_floor < 1.0:
            raise InvalidInputError(f"iou_floor must be in (0, 1), got {self.iou_floor}")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise InvalidInputError(
                f"aggregation_mode must be one of {AGGREGATION_MODES}, got {self.aggregation_mode!r}"
            )


@dataclass(frozen=True)
class Assignment:
    proposal_index: int
    target_gt_index: int
    iou_with_target: float


@dataclass(frozen=True)
class Triplet:
    gt_index: int
    positive_index: int
    negative_index: int


@dataclass(frozen=True)
class TripletWork:
    triplet: Triplet
    attractive: float
    repulsive: float


@dataclass(frozen=True)
class LossReport:
    """CouLoss value with its attraction/repulsion split.

    ``attractive_work`` and ``repulsive_work`` are the un-normalized
    component sums under the chosen aggregation mode;
    ``total == attractive_work / num_gts + repulsive_work / num_gts``.
    """

    total: float
    attractive_work: float
    repulsive_work: float
    per_triplet: tuple[TripletWork, ...]
    mode: str
    num_gts: int


@dataclass(frozen=True)
class TripletStructure:
    """Assignment and triplet topology, reusable across descent steps."""

    triplets: tuple[Triplet, ...]
    assignments: tuple[Assignment, ...]
    target_of: dict = field(hash=False, compare=False, default_factory=dict)

    @classmethod
    def build(cls, triplets, assignments):
        return cls(
            triplets=tuple(triplets),
            assignments=tuple(assignments),
            target_of={a.proposal_index: a.target_gt_index for a in assignments},
        )


def attractive_force(g: BBox, p: BBox, cfg: CouLossConfig | None = None) -> float:
    """Pull magnitude between a proposal and its target: -ln(IoU).

    Decreasing in IoU; zero for a perfect overlap. Raises
    :class:`NoOverlapError` when the boxes are disjoint (the force is only
    defined on overlapping pairs).
    """
    cfg = cfg or CouLossConfig()
    v = geometry.iou(g, p)
    if v <= 0.0:
        raise NoOverlapError("attractive force undefined for non-overlapping boxes")
    return -math.log(max(v, cfg.iou_floor))


def repulsive_force(g: BBox, p: BBox, cfg: CouLossConfig | None = None) -> float:
    """Push magnitude between a proposal and a non-target: -ln(1 - IoU)."""
    cfg = cfg or CouLossConfig()
    v = geometry.iou(g, p)
    if v <= 0.0:
        raise NoOverlapError("repulsive force undefined for non-overlapping boxes")
    return -math.log(max(1.0 - v, cfg.iou_floor))


def effective_cos(g_i: BBox, p_n: BBox, g_j: BBox) -> tuple[float, float]:
    """Direction factors of the effective forces for one triplet.

    Attraction always points the right way (theta = 0), so its factor is 1.
    The repulsive factor is the cosine of the angle at the center of the
    non-target ``g_i`` between the negative proposal's center and the center
    of its own target ``g_j``.
    """
    cos_r = geometry.cos_angle_at(
        geometry.center(g_i), geometry.center(p_n), geometry.center(g_j)
    )
    return 1.0, cos_r


def work_terms(
    g_i: BBox, p_p: BBox, p_n: BBox, g_j: BBox, cfg: CouLossConfig | None = None
) -> tuple[float, float]:
    """Attractive and repulsive work for the triplet (g_i, p_p, p_n).

    ``g_j`` is the target of ``p_n``. Both border-distance factors are
    measured against ``g_i``. Non-positive raw work is clamped to zero.
    """
    cfg = cfg or CouLossConfig()
    cos_a, cos_r = effective_cos(g_i, p_n, g_j)

    v_a = geometry.iou(g_i, p_p)
    f_a = -math.log(max(v_a, cfg.iou_floor)) if v_a > 0.0 else -math.log(cfg.iou_floor)
    w_a = f_a * cos_a * geometry.border_distance(g_i, p_p)

    v_r = geometry.iou(g_i, p_n)
    if v_r > 0.0:
        f_r = -math.log(max(1.0 - v_r, cfg.iou_floor))
        w_r = f_r * cos_r * geometry.border_distance(g_i, p_n)
    else:
        w_r = 0.0
    return max(0.0, w_a), max(0.0, w_r)


def assign_proposals(
    gts: list[BBox], proposals: list[BBox], cfg: CouLossConfig | None = None
) -> list[Assignment]:
    """Assign each proposal to its max-IoU ground truth.

    A proposal is assigned only if the best IoU exceeds the positive
    threshold and the proposal's center falls inside that ground truth.
    Ties break toward the lowest ground-truth index.
    """
    cfg = cfg or CouLossConfig()
    if not gts:
        raise InvalidInputError("at least one ground-truth box is required")
    out = []
    for pi, p in enumerate(proposals):
        best_gi, best_v = 0, -1.0
        for gi, g in enumerate(gts):
            v = geometry.iou(g, p)
            if v > best_v:
                best_gi, best_v = gi, v
        if best_v > cfg.positive_iou_threshold and geometry.contains_center(gts[best_gi], p):
            out.append(Assignment(pi, best_gi, best_v))
    return out


def assemble_triplets(
    gts: list[BBox], proposals: list[BBox], cfg: CouLossConfig | None = None
) -> tuple[list[Triplet], list[Assignment]]:
    """Enumerate (target, positive, negative) triplets.

    For every ground truth G_i, pairs each proposal assigned to G_i with
    each proposal assigned elsewhere that still overlaps G_i (repulsion only
    exists where there is an overlap).
    """
    cfg = cfg or CouLossConfig()
    assignments = assign_proposals(gts, proposals, cfg)
    by_gt: dict[int, list[int]] = {}
    for a in assignments:
        by_gt.setdefault(a.target_gt_index, []).append(a.proposal_index)

    triplets = []
    for gi in range(len(gts)):
        positives = sorted(by_gt.get(gi, []))
        if not positives:
            continue
        negatives = [
            a.proposal_index
            for a in assignments
            if a.target_gt_index != gi and geometry.iou(gts[gi], proposals[a.proposal_index]) > 0.0
        ]
        for pp in positives:
            for pn in sorted(negatives):
                triplets.append(Triplet(gi, pp, pn))
    return triplets, assignments


def _aggregation_terms(structure: TripletStructure, mode: str):
    """(gt, proposal, multiplicity) term lists for both work components.

    In literal mode every triplet contributes both of its terms; in
    deduplicated mode each (gt, proposal) pair is counted once.
    """
    att_mult: dict[tuple[int, int], int] = {}
    rep_mult: dict[tuple[int, int], int] = {}
    for t in structure.triplets:
        att_mult[(t.gt_index, t.positive_index)] = (
            att_mult.get((t.gt_index, t.positive_index), 0) + 1
        )
        rep_mult[(t.gt_index, t.negative_index)] = (
            rep_mult.get((t.gt_index, t.negative_index), 0) + 1
        )
    if mode == "deduplicated":
        att = [(gi, pi, 1) for (gi, pi) in sorted(att_mult)]
        rep = [(gi, pi, 1) for (gi, pi) in sorted(rep_mult)]
    else:
        att = [(gi, pi, m) for (gi, pi), m in sorted(att_mult.items())]
        rep = [(gi, pi, m) for (gi, pi), m in sorted(rep_mult.items())]
    return att, rep


def _attractive_work(g: BBox, p: BBox, cfg: CouLossConfig) -> float:
    v = geometry.iou(g, p)
    f = -math.log(max(v, cfg.iou_floor)) if v > 0.0 else -math.log(cfg.iou_floor)
    return max(0.0, f * geometry.border_distance(g, p))


def _repulsive_work(g: BBox, p: BBox, g_target: BBox, cfg: CouLossConfig) -> float:
    v = geometry.iou(g, p)
    if v <= 0.0:
        return 0.0
    f = -math.log(max(1.0 - v, cfg.iou_floor))
    cos = geometry.cos_angle_at(geometry.center(g), geometry.center(p), geometry.center(g_target))
    return max(0.0, f * cos * geometry.border_distance(g, p))


def couloss(
    gts: list[BBox],
    proposals: list[BBox],
    cfg: CouLossConfig | None = None,
    *,
    include_attraction: bool = True,
    include_repulsion: bool = True,
    structure: TripletStructure | None = None,
) -> LossReport:
    """Total work-formula loss over a scene, normalized by the GT count.

    ``structure`` may carry a previously built assignment/triplet topology
    (frozen-assignment descent); by default it is rebuilt from the current
    boxes. The attraction/repulsion switches zero out one component while
    keeping the other bit-identical to the full computation.
    """
    cfg = cfg or CouLossConfig()
    if not gts:
        raise InvalidInputError("couloss requires at least one ground-truth box")
    if structure is None:
        triplets, assignments = assemble_triplets(gts, proposals, cfg)
        structure = TripletStructure.build(triplets, assignments)

    att_terms, rep_terms = _aggregation_terms(structure, cfg.aggregation_mode)
    att_w = {
        (gi, pi): _attractive_work(gts[gi], proposals[pi], cfg) for gi, pi, _ in att_terms
    }
    rep_w = {
        (gi, pi): _repulsive_work(gts[gi], proposals[pi], gts[structure.target_of[pi]], cfg)
        for gi, pi, _ in rep_terms
    }
    att_sum = 0.0
    rep_sum = 0.0
    if include_attraction:
        for gi, pi, mult in att_terms:
            att_sum += mult * att_w[(gi, pi)]
    if include_repulsion:
        for gi, pi, mult in rep_terms:
            rep_sum += mult * rep_w[(gi, pi)]

    per_triplet = tuple(
        TripletWork(
            t,
            att_w[(t.gt_index, t.positive_index)],
            rep_w[(t.gt_index, t.negative_index)],
        )
        for t in structure.triplets
    )
    n = len(gts)
    return LossReport(
        total=att_sum / n + rep_sum / n,
        attractive_work=att_sum,
        repulsive_work=rep_sum,
        per_triplet=per_triplet,
        mode=cfg.aggregation_mode,
        num_gts=n,
    )


def couloss_gradient(
    gts: list[BBox],
    proposals: list[BBox],
    cfg: CouLossConfig | None = None,
    *,
    include_attraction: bool = True,
    include_repulsion: bool = True,
    structure: TripletStructure | None = None,
    warn_kinks: bool = False,
) -> np.ndarray:
    """Analytic d(couloss)/d(proposal coordinates), shape (N, 4).

    Ground-truth boxes and the assignment topology are treated as constants;
    clamped or ignored terms contribute exactly zero gradient. With
    ``warn_kinks`` a :class:`KinkWarning` is emitted when any sub-expression
    sits within ``cfg.kink_tolerance`` (relative) of a non-differentiable
    switch.
    """
    cfg = cfg or CouLossConfig()
    if not gts:
        raise InvalidInputError("couloss requires at least one ground-truth box")
    if structure is None:
        triplets, assignments = assemble_triplets(gts, proposals, cfg)
        structure = TripletStructure.build(triplets, assignments)
    if warn_kinks:
        kinks = detect_kinks(gts, proposals, cfg, structure=structure)
        if kinks:
            warnings.warn(
                f"gradient evaluated near {len(kinks)} non-differentiable point(s): {kinks[0]}",
                KinkWarning,
                stacklevel=2,
            )

    att_terms, rep_terms = _aggregation_terms(structure, cfg.aggregation_mode)
    grad_att = np.zeros((len(proposals), 4))
    grad_rep = np.zeros((len(proposals), 4))

    if include_attraction:
        for gi, pi, mult in att_terms:
            w, dw = _attractive_work_grad(gts[gi], proposals[pi], cfg)
            if w > 0.0:
                grad_att[pi] += np.multiply(dw, mult)
    if include_repulsion:
        for gi, pi, mult in rep_terms:
            g_target = gts[structure.target_of[pi]]
            w, dw = _repulsive_work_grad(gts[gi], proposals[pi], g_target, cfg)
            if w > 0.0:
                grad_rep[pi] += np.multiply(dw, mult)

    n = len(gts)
    return grad_att / n + grad_rep / n


def _attractive_work_grad(g: BBox, p: BBox, cfg: CouLossConfig):
    v, dv = iou_and_grad(g, p)
    if v > cfg.iou_floor:
        f = -math.log(v)
        df = tuple(-dv[k] / v for k in range(4))
    else:
        f = -math.log(cfg.iou_floor)
        df = ZERO4
    s, ds = border_distance_and_grad(g, p)
    w = f * s
    if w <= 0.0:
        return 0.0, ZERO4
    return w, tuple(df[k] * s + f * ds[k] for k in range(4))


def _repulsive_work_grad(g: BBox, p: BBox, g_target: BBox, cfg: CouLossConfig):
    v, dv = iou_and_grad(g, p)
    if v <= 0.0:
        return 0.0, ZERO4
    one_minus = 1.0 - v
    if one_minus > cfg.iou_floor:
        f = -math.log(one_minus)
        df = tuple(dv[k] / one_minus for k in range(4))
    else:
        f = -math.log(cfg.iou_floor)
        df = ZERO4
    gc = geometry.center(g)
    tc = geometry.center(g_target)
    cos, dcos = cos_angle_and_grad(tc.x - gc.x, tc.y - gc.y, gc.x, gc.y, p)
    s, ds = border_distance_and_grad(g, p)
    w = f * cos * s
    if w <= 0.0:
        return 0.0, ZERO4
    grad = tuple(df[k] * cos * s + f * dcos[k] * s + f * cos * ds[k] for k in range(4))
    return w, grad


def detect_kinks(
    gts: list[BBox],
    proposals: list[BBox],
    cfg: CouLossConfig | None = None,
    tolerance: float | None = None,
    structure: TripletStructure | None = None,
) -> list[str]:
    """Report sub-expressions close to a non-differentiable switch.

    Checks assignment boundaries (IoU threshold, argmax ties, center-inside
    flips), overlap-existence boundaries, min()/abs() switches and clamp
    edges inside the border-distance factor, the W <= 0 clamp, log floors,
    and degenerate angle configurations. Distance tolerances are relative to
    the ground-truth box extents.
    """
    cfg = cfg or CouLossConfig()
    tol = cfg.kink_tolerance if tolerance is None else tolerance
    if structure is None:
        triplets, assignments = assemble_triplets(gts, proposals, cfg)
        structure = TripletStructure.build(triplets, assignments)

    out: list[str] = []

    def near(a, b, scale=1.0):
        return abs(a - b) <= tol * scale

    for pi, p in enumerate(proposals):
        ious = sorted((geometry.iou(g, p) for g in gts), reverse=True)
        if near(ious[0], cfg.positive_iou_threshold):
            out.append(f"proposal {pi}: best IoU at the positive threshold")
        if len(ious) > 1 and ious[0] > 0.0 and near(ious[0], ious[1]):
            out.append(f"proposal {pi}: argmax IoU tie between ground truths")
        ti = structure.target_of.get(pi)
        if ti is not None:
            g = gts[ti]
            cx, cy = (p.x1 + p.x2) / 2.0, (p.y1 + p.y2) / 2.0
            if (
                near(cx, g.x1, g.width)
                or near(cx, g.x2, g.width)
                or near(cy, g.y1, g.height)
                or near(cy, g.y2, g.height)
            ):
                out.append(f"proposal {pi}: center at the boundary of its target")

    def check_pair(kind, gi, pi):
        g, p = gts[gi], proposals[pi]
        v = geometry.iou(g, p)
        w, h = g.width, g.height
        cx, cy = (p.x1 + p.x2) / 2.0, (p.y1 + p.y2) / 2.0
        label = f"{kind} pair (gt {gi}, proposal {pi})"
        if kind == "repulsive" and near(v, 0.0):
            out.append(f"{label}: IoU at the overlap-existence boundary")
        if near(v, cfg.iou_floor) or near(1.0 - v, cfg.iou_floor):
            out.append(f"{label}: IoU at the log floor")
        # corner switches of the intersection rectangle
        if near(p.x1, g.x1, w) or near(p.x2, g.x2, w) or near(p.y1, g.y1, h) or near(p.y2, g.y2, h):
            out.append(f"{label}: intersection corner switch")
        l, r = abs(cx - g.x1), abs(cx - g.x2)
        t, b = abs(cy - g.y1), abs(cy - g.y2)
        if near(l, r, w) or near(t, b, h):
            out.append(f"{label}: min(l,r) or min(t,b) tie")
        if near(min(l, r), 0.0, w) or near(min(t, b), 0.0, h):
            out.append(f"{label}: center on a border line")
        fx = 1.0 - min(l, r) / (w / 2.0)
        fy = 1.0 - min(t, b) / (h / 2.0)
        if near(fx, 0.0) or near(fy, 0.0):
            out.append(f"{label}: border-distance factor at the zero clamp")

    att_terms, rep_terms = _aggregation_terms(structure, cfg.aggregation_mode)
    for gi, pi, _ in att_terms:
        check_pair("attractive", gi, pi)
    for gi, pi, _ in rep_terms:
        check_pair("repulsive", gi, pi)
        g, p = gts[gi], proposals[pi]
        g_target = gts[structure.target_of[pi]]
        gc, pc = geometry.center(g), geometry.center(p)
        scale = max(g.width, g.height)
        if math.hypot(pc.x - gc.x, pc.y - gc.y) <= tol * scale:
            out.append(f"repulsive pair (gt {gi}, proposal {pi}): degenerate angle vertex")
        w_raw = _repulsive_work_raw(g, p, g_target, cfg)
        if abs(w_raw) <= tol:
            out.append(f"repulsive pair (gt {gi}, proposal {pi}): work at the zero clamp")
    return out


def _repulsive_work_raw(g: BBox, p: BBox, g_target: BBox, cfg: CouLossConfig) -> float:
    v = geometry.iou(g, p)
    if v <= 0.0:
        return 0.0
    f = -math.log(max(1.0 - v, cfg.iou_floor))
    cos = geometry.cos_angle_at(geometry.center(g), geometry.center(p), geometry.center(g_target))
    return f * cos * geometry.border_distance(g, p)
