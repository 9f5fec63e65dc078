"""Synthetic multi-person scenes with ground-truth identities.

Two families of output share one motion model:

* detection-only tracking scenarios (crossings, gaps, raw-id churn) with the
  true person id per detection, used to score identity recovery; and
* rendered scenes (simple articulated figures on a textured background) whose
  per-action appearance and motion make the six actions visually learnable,
  used to build person clips for fusion training.

Everything is seeded and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tracksync import BBox, Detection, TrackSet
from .validation import ValidationError
from .vitalgen import ACTION_LABELS

# ---------------------------------------------------------------------------
# Tracking scenarios (no rendering)
# ---------------------------------------------------------------------------

@dataclass
class TrackingScenario:
    detections: list[Detection]
    truth: list[int]  # true person id per detection, parallel to detections
    n_persons: int
    n_frames: int


def make_tracking_scenario(seed: int, n_persons: int = 3, n_frames: int = 60,
                           with_crossing: bool = True, gap_frames: int = 10,
                           noise_sigma: float = 0.0,
                           frame_size: tuple[int, int] = (480, 640)) -> TrackingScenario:
    """Constant-velocity persons with detector pathologies baked in.

    Raw ids churn every 9 frames; if ``with_crossing``, the first two persons
    follow crossing paths and their raw ids swap for good at the crossing
    frame; one person disappears for ``gap_frames`` frames mid-sequence and
    re-enters under a brand-new raw id.
    """
    if gap_frames > 15:
        raise ValidationError("scenario gaps above 15 frames are not re-associable")
    rng = np.random.default_rng(seed)
    h_img, w_img = frame_size
    size_wh = [(rng.uniform(28, 40), rng.uniform(60, 80)) for _ in range(n_persons)]

    starts = []
    vels = []
    if with_crossing and n_persons >= 2:
        # an overtake: the pair swaps x-order mid-sequence while their boxes
        # overlap, which is when real detectors swap ids; centroids stay a
        # body-width apart so identity remains physically recoverable
        mid = n_frames / 2
        cx, cy = w_img / 2, h_img / 2
        gap_y = rng.uniform(16, 24)
        v_fast = rng.uniform(4.5, 5.5)
        v_slow = rng.uniform(2.0, 2.8)
        starts.append((cx - v_fast * mid, cy - gap_y / 2))
        vels.append((v_fast, 0.0))
        starts.append((cx - v_slow * mid, cy + gap_y / 2))
        vels.append((v_slow, 0.0))
    lane = 0
    while len(starts) < n_persons:
        starts.append((rng.uniform(30, 80), 60 + 110 * lane + rng.uniform(-10, 10)))
        vels.append((rng.uniform(2.0, 5.0), rng.uniform(-0.5, 0.5)))
        lane += 1

    gap_person = n_persons - 1
    gap_start = int(n_frames * 0.4)
    cross_frame = n_frames // 2

    detections: list[Detection] = []
    truth: list[int] = []
    churn_period = 9
    for f in range(n_frames):
        for p in range(n_persons):
            if p == gap_person and gap_start <= f < gap_start + gap_frames:
                continue
            x = starts[p][0] + vels[p][0] * f
            y = starts[p][1] + vels[p][1] * f
            if noise_sigma > 0:
                x += rng.normal(0, noise_sigma)
                y += rng.normal(0, noise_sigma)
            w, h = size_wh[p]
            raw = p * 100 + f // churn_period
            if with_crossing and n_persons >= 2 and f >= cross_frame and p in (0, 1):
                raw = (1 - p) * 100 + f // churn_period  # detector swaps the pair
            if p == gap_person and f >= gap_start + gap_frames:
                raw = 9000 + p  # fresh id after re-entry
            detections.append(Detection(
                frame=f, bbox=(x - w / 2, y - h / 2, w, h),
                confidence=0.9, raw_track_id=raw,
            ))
            truth.append(p + 1)
    return TrackingScenario(detections=detections, truth=truth,
                            n_persons=n_persons, n_frames=n_frames)


def identity_recovery(tracks: TrackSet, scenario: TrackingScenario) -> float:
    """Fraction of detections whose canonical id maps to their true person.

    Canonical and true ids are put in correspondence by the assignment that
    maximizes agreement, then scored over all detections.
    """
    claims = {}
    for pid, frames in tracks.persons.items():
        for f, bbox in frames.items():
            claims[(f, bbox)] = pid
    canon_ids = sorted(tracks.persons)
    truth_ids = sorted(set(scenario.truth))
    agree = np.zeros((len(canon_ids), len(truth_ids)))
    total = 0
    pairs = []
    for det, true_pid in zip(scenario.detections, scenario.truth):
        canon = claims.get((det.frame, det.bbox))
        pairs.append((canon, true_pid))
        total += 1
        if canon is not None:
            agree[canon_ids.index(canon), truth_ids.index(true_pid)] += 1
    rows, cols = linear_sum_assignment(-agree)
    mapping = {canon_ids[i]: truth_ids[j] for i, j in zip(rows, cols)}
    correct = sum(1 for canon, true_pid in pairs
                  if canon is not None and mapping.get(canon) == true_pid)
    return correct / total if total else 1.0


def canonical_to_truth(tracks: TrackSet, detections: list[Detection],
                       truth: list[int]) -> dict[int, int]:
    """Map canonical track ids to true person ids by maximum agreement."""
    claims = {}
    for pid, frames in tracks.persons.items():
        for f, bbox in frames.items():
            claims[(f, bbox)] = pid
    canon_ids = sorted(tracks.persons)
    truth_ids = sorted(set(truth))
    agree = np.zeros((len(canon_ids), len(truth_ids)))
    for det, true_pid in zip(detections, truth):
        canon = claims.get((det.frame, det.bbox))
        if canon is not None:
            agree[canon_ids.index(canon), truth_ids.index(true_pid)] += 1
    rows, cols = linear_sum_assignment(-agree)
    return {canon_ids[i]: truth_ids[j] for i, j in zip(rows, cols)}


# ---------------------------------------------------------------------------
# Rendered scenes
# ---------------------------------------------------------------------------

# per-action figure geometry and gait parameters
_ARCHETYPES = {
    "running":      dict(w=16, h=52, vx=5.0, bob_amp=3.0, bob_period=4, pose="upright"),
    "limping":      dict(w=16, h=50, vx=2.5, bob_amp=4.0, bob_period=8, pose="upright", stutter=True),
    "crawling":     dict(w=44, h=16, vx=1.8, bob_amp=1.0, bob_period=6, pose="prone"),
    "arm_injury":   dict(w=18, h=50, vx=2.2, bob_amp=1.0, bob_period=6, pose="upright", arm_blob=True),
    "head_injury":  dict(w=18, h=50, vx=2.0, bob_amp=1.0, bob_period=6, pose="upright", head_blob=True, zigzag=True),
    "walk_collapse": dict(w=16, h=50, vx=2.5, bob_amp=1.5, bob_period=6, pose="collapsing"),
}

# shared archetype for the visually ambiguous injury trio: an unremarkable
# slow walk with no distinguishing appearance or motion cue
_WOUNDED_WALK = dict(w=17, h=50, vx=2.2, bob_amp=1.0, bob_period=6, pose="upright")
_AMBIGUOUS_TRIO = ("arm_injury", "head_injury", "walk_collapse")


def _figure_extent(arch: dict, f: int, n_frames: int) -> tuple[float, float]:
    """Body (w, h) at frame f; collapsing figures morph to prone mid-scene."""
    w, h = arch["w"], arch["h"]
    if arch["pose"] == "collapsing":
        t0 = n_frames // 2
        span = 4
        if f >= t0 + span:
            return 44.0, 16.0
        if f >= t0:
            a = (f - t0) / span
            return w + (44 - w) * a, h + (16 - h) * a
    return float(w), float(h)


@dataclass
class ScenePerson:
    person_id: int
    subject_id: str
    action: str
    start_xy: tuple[float, float]
    shade: int  # base gray level of the figure


@dataclass
class RenderedScene:
    frames: np.ndarray                # (F, H, W, 3) uint8
    detections: list[Detection]
    truth: list[int]
    persons: list[ScenePerson]

    def manifest(self) -> dict[int, str]:
        return {p.person_id: p.subject_id for p in self.persons}

    def labels(self) -> dict[str, str]:
        return {p.subject_id: p.action for p in self.persons}


def render_scene(seed: int, persons: list[tuple[int, str, str]], n_frames: int = 40,
                 frame_size: tuple[int, int] = (240, 320),
                 ambiguous_video: bool = False, churn_period: int = 9,
                 noise_sigma: float = 0.0) -> RenderedScene:
    """Draw persons walking separate lanes; emit frames plus detections.

    ``persons`` rows are (person_id, subject_id, action). Raw detector ids
    churn every ``churn_period`` frames so downstream resynchronization has
    real work to do. With ``ambiguous_video`` the three augmentation-eligible
    injury actions all render the same wounded-walk archetype.
    """
    rng = np.random.default_rng(seed)
    h_img, w_img = frame_size
    lane_height = h_img // (len(persons) + 1)

    scene_persons = []
    for i, (pid, subject_id, action) in enumerate(persons):
        if action not in ACTION_LABELS:
            raise ValidationError(f"unknown action {action!r}")
        cy = lane_height * (i + 1)
        cx = 30 + rng.uniform(0, 12)
        shade = int(rng.integers(150, 230))
        scene_persons.append(ScenePerson(pid, subject_id, action, (cx, cy), shade))

    background = rng.integers(20, 45, size=(h_img, w_img, 3), dtype=np.uint8)
    frames = np.zeros((n_frames, h_img, w_img, 3), dtype=np.uint8)
    detections: list[Detection] = []
    truth: list[int] = []

    for f in range(n_frames):
        img = background.copy()
        for sp in scene_persons:
            arch = dict(_ARCHETYPES[sp.action])
            if ambiguous_video and sp.action in _AMBIGUOUS_TRIO:
                arch = dict(_WOUNDED_WALK)
            bw, bh = _figure_extent(arch, f, n_frames)
            cx = sp.start_xy[0] + _displacement(arch, f, n_frames)
            stopped = arch["pose"] == "collapsing" and f >= n_frames // 2
            cy = sp.start_xy[1]
            if not stopped:
                cy += arch["bob_amp"] * math.sin(2 * math.pi * f / arch["bob_period"])
                if arch.get("zigzag"):
                    cy += 6.0 * math.sin(2 * math.pi * f / 12.0)
            cx = min(cx, w_img - bw / 2 - 6)

            _draw_figure(img, cx, cy, bw, bh, arch, f, sp.shade)

            pad = 4.0
            bbox: BBox = (cx - bw / 2 - pad, cy - bh / 2 - pad, bw + 2 * pad, bh + 2 * pad)
            x, y, w, h = bbox
            if noise_sigma > 0:
                x += rng.normal(0, noise_sigma)
                y += rng.normal(0, noise_sigma)
            raw = sp.person_id * 100 + f // churn_period
            detections.append(Detection(frame=f, bbox=(x, y, w, h),
                                        confidence=0.9, raw_track_id=raw))
            truth.append(sp.person_id)
        frames[f] = img
    return RenderedScene(frames=frames, detections=detections,
                         truth=truth, persons=scene_persons)


def _displacement(arch: dict, f: int, n_frames: int) -> float:
    """Horizontal displacement after f frames for one archetype."""
    if arch.get("stutter"):
        fast, slow = arch["vx"], arch["vx"] * 0.3
        return fast * math.ceil(f / 2) + slow * (f // 2)
    if arch["pose"] == "collapsing":
        return arch["vx"] * min(f, n_frames // 2)
    return arch["vx"] * f


def _draw_rect(img, x0, y0, x1, y1, color):
    h, w = img.shape[:2]
    x0, x1 = int(np.clip(x0, 0, w)), int(np.clip(x1, 0, w))
    y0, y1 = int(np.clip(y0, 0, h)), int(np.clip(y1, 0, h))
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = color


def _draw_figure(img, cx, cy, bw, bh, arch, f, shade):
    """Head + torso + gait-phased limbs; prone figures lie along x."""
    color = (shade, shade, shade)
    bright = (min(shade + 60, 255),) * 3
    phase = f % max(2, int(arch["bob_period"]))
    prone = bh < bw  # lying or crawling
    if prone:
        _draw_rect(img, cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2, color)
        _draw_rect(img, cx - bw / 2 - 6, cy - bh / 2, cx - bw / 2 + 2, cy + bh / 2, bright)  # head at front
        off = 3 if phase < arch["bob_period"] / 2 else -3
        _draw_rect(img, cx - 8 + off, cy + bh / 2, cx + off, cy + bh / 2 + 4, color)  # limb under body
    else:
        head_r = 5
        _draw_rect(img, cx - bw / 2, cy - bh / 2 + 2 * head_r, cx + bw / 2, cy + bh / 6, color)  # torso
        _draw_rect(img, cx - head_r, cy - bh / 2, cx + head_r, cy - bh / 2 + 2 * head_r, color)  # head
        leg_w = bw / 2 - 1
        off = 4 if phase < arch["bob_period"] / 2 else -4
        _draw_rect(img, cx - leg_w - off / 2, cy + bh / 6, cx - off / 2, cy + bh / 2, color)
        _draw_rect(img, cx + off / 2, cy + bh / 6, cx + leg_w + off / 2, cy + bh / 2, color)
        if arch.get("arm_blob"):
            _draw_rect(img, cx - bw / 2 - 4, cy - bh / 8, cx - bw / 2 + 4, cy + bh / 8, bright)
        if arch.get("head_blob"):
            _draw_rect(img, cx - head_r - 2, cy - bh / 2 - 4, cx + head_r + 2, cy - bh / 2 + 4, bright)
