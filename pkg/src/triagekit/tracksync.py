"""Identity-stable person trajectories from raw detection streams.

Detectors assign track ids that churn when people cross, leave the frame, or
overlap. This module re-associates detections into canonical per-person
trajectories using per-frame minimum-cost matching over three cues: distance
to a constant-velocity prediction, bounding-box overlap, and velocity change.
Canonical tracks are then cropped into fixed-length person clips and paired
one-to-one with sensor streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy.optimize import linear_sum_assignment

from .validation import AlignmentError, ParseError, ValidationError
from .vitalgen import VitalSignSeries

_INADMISSIBLE = 1e9

BBox = tuple[float, float, float, float]  # x, y, w, h


@dataclass(frozen=True)
class Detection:
    frame: int
    bbox: BBox
    confidence: float
    raw_track_id: int

    def __post_init__(self):
        x, y, w, h = self.bbox
        if self.frame < 0:
            raise ValidationError(f"frame index must be >= 0, got {self.frame}")
        if w <= 0 or h <= 0:
            raise ValidationError(f"bbox w/h must be positive, got w={w}, h={h}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must be in [0, 1], got {self.confidence}")

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return (x + w / 2.0, y + h / 2.0)


@dataclass(frozen=True)
class SyncParams:
    max_gap_frames: int = 15
    gate_radius: float = 50.0
    velocity_window: int = 5
    iou_gate: float = 0.3
    w_distance: float = 1.0
    w_iou: float = 1.0
    w_velocity: float = 0.5

    def __post_init__(self):
        for name in ("max_gap_frames", "gate_radius", "velocity_window", "iou_gate"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


class TrackResynchronizer:
    """Estimator-style wrapper: ``transform`` maps detections to a TrackSet.

    Stateless between calls; parameters follow :class:`SyncParams` defaults.
    """

    def __init__(self, max_gap_frames: int = 15, gate_radius: float = 50.0,
                 velocity_window: int = 5, iou_gate: float = 0.3,
                 w_distance: float = 1.0, w_iou: float = 1.0, w_velocity: float = 0.5):
        self.max_gap_frames = max_gap_frames
        self.gate_radius = gate_radius
        self.velocity_window = velocity_window
        self.iou_gate = iou_gate
        self.w_distance = w_distance
        self.w_iou = w_iou
        self.w_velocity = w_velocity

    def get_params(self, deep: bool = True) -> dict:
        return {
            "max_gap_frames": self.max_gap_frames,
            "gate_radius": self.gate_radius,
            "velocity_window": self.velocity_window,
            "iou_gate": self.iou_gate,
            "w_distance": self.w_distance,
            "w_iou": self.w_iou,
            "w_velocity": self.w_velocity,
        }

    def set_params(self, **params):
        known = self.get_params()
        for key, value in params.items():
            if key not in known:
                raise ValidationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X=None, y=None):
        return self

    def transform(self, detections: list[Detection]) -> "TrackSet":
        return resynchronize(detections, SyncParams(**self.get_params()))


@dataclass
class TrackSet:
    """Canonical persons 1..N, each a frame-indexed map of bounding boxes."""

    persons: dict[int, dict[int, BBox]] = field(default_factory=dict)

    def __post_init__(self):
        by_frame: dict[int, set] = {}
        for pid, frames in self.persons.items():
            for f, bbox in frames.items():
                seen = by_frame.setdefault(f, set())
                if bbox in seen:
                    raise ValidationError(
                        f"two persons share bbox {bbox} in frame {f}"
                    )
                seen.add(bbox)

    @property
    def n_persons(self) -> int:
        return len(self.persons)

    def person_ids(self) -> list[int]:
        return sorted(self.persons)

    def frames_of(self, person_id: int) -> list[int]:
        return sorted(self.persons[person_id])

    def bbox_at(self, person_id: int, frame: int) -> BBox | None:
        return self.persons[person_id].get(frame)

    def presence(self, person_id: int, start: int, length: int) -> np.ndarray:
        frames = self.persons[person_id]
        return np.array([(start + i) in frames for i in range(length)], dtype=bool)


def iou(a: BBox, b: BBox) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x1, y1 = max(ax, bx), max(ay, by)
    x2, y2 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def ingest_detections(path) -> list[Detection]:
    """Parse newline-delimited detection records, sorted by frame.

    Record schema: ``{"frame", "raw_id", "x", "y", "w", "h", "conf"}``.
    Malformed lines raise ParseError with their line number.
    """
    detections = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                det = Detection(
                    frame=int(rec["frame"]),
                    bbox=(float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"])),
                    confidence=float(rec["conf"]),
                    raw_track_id=int(rec["raw_id"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{line_no}: bad detection record ({exc})") from None
            detections.append(det)
    detections.sort(key=lambda d: (d.frame, d.bbox, d.confidence, d.raw_track_id))
    return detections


def write_detections(detections: list[Detection], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in detections:
            x, y, w, h = d.bbox
            fh.write(json.dumps({
                "frame": d.frame, "raw_id": d.raw_track_id,
                "x": x, "y": y, "w": w, "h": h, "conf": d.confidence,
            }) + "\n")


class _Track:
    __slots__ = ("pid", "frames", "centers", "last_frame")

    def __init__(self, pid: int, frame: int, bbox: BBox):
        self.pid = pid
        self.frames: dict[int, BBox] = {frame: bbox}
        self.centers: list[tuple[int, float, float]] = []
        self.last_frame = frame
        cx, cy = bbox[0] + bbox[2] / 2, bbox[1] + bbox[3] / 2
        self.centers.append((frame, cx, cy))

    def add(self, frame: int, bbox: BBox):
        self.frames[frame] = bbox
        self.last_frame = frame
        cx, cy = bbox[0] + bbox[2] / 2, bbox[1] + bbox[3] / 2
        self.centers.append((frame, cx, cy))

    def _fit(self, window: int):
        """Least-squares constant-velocity fit over the last observations.

        Returns (x0, y0, vx, vy) anchored at the last observed frame. The
        fitted line smooths centroid noise, so one stolen or jittered point
        barely moves the prediction.
        """
        pts = self.centers[-window:]
        f_last, x_last, y_last = self.centers[-1]
        if len(pts) < 2:
            return x_last, y_last, 0.0, 0.0
        t = np.array([p[0] for p in pts], dtype=float)
        xs = np.array([p[1] for p in pts])
        ys = np.array([p[2] for p in pts])
        tc = t - t.mean()
        denom = float(np.dot(tc, tc))
        if denom == 0.0:
            return x_last, y_last, 0.0, 0.0
        vx = float(np.dot(tc, xs - xs.mean()) / denom)
        vy = float(np.dot(tc, ys - ys.mean()) / denom)
        x0 = float(xs.mean() + vx * (f_last - t.mean()))
        y0 = float(ys.mean() + vy * (f_last - t.mean()))
        return x0, y0, vx, vy

    def velocity(self, window: int) -> tuple[float, float]:
        _, _, vx, vy = self._fit(window)
        return (vx, vy)

    def predict(self, frame: int, window: int) -> tuple[float, float, BBox]:
        x0, y0, vx, vy = self._fit(window)
        dt = frame - self.last_frame
        px, py = x0 + vx * dt, y0 + vy * dt
        w, h = self.frames[self.last_frame][2:]
        return px, py, (px - w / 2, py - h / 2, w, h)


def resynchronize(detections: list[Detection], params: SyncParams | None = None) -> TrackSet:
    """Assign canonical identities across raw-id churn, gaps, and swaps.

    Per frame, active tracks and detections are matched by minimum-cost
    assignment; pairs failing both the centroid gate and the IoU gate are
    inadmissible. Leftover detections start new canonical tracks. Detections
    inside a frame are canonically ordered first, so input order never
    affects the result.
    """
    params = params or SyncParams()
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        by_frame.setdefault(det.frame, []).append(det)

    # velocity-change costs compare against a typical per-frame motion scale
    v_scale = params.gate_radius / params.velocity_window

    tracks: list[_Track] = []
    next_pid = 1
    for frame in sorted(by_frame):
        dets = sorted(by_frame[frame],
                      key=lambda d: (d.bbox, d.confidence, d.raw_track_id))
        # a track missing for up to max_gap_frames frames can still re-claim
        active = [t for t in tracks if frame - t.last_frame <= params.max_gap_frames + 1]
        assigned_dets: set[int] = set()
        if active:
            cost = np.full((len(active), len(dets)), _INADMISSIBLE)
            for i, tr in enumerate(active):
                px, py, pbox = tr.predict(frame, params.velocity_window)
                vx, vy = tr.velocity(params.velocity_window)
                for j, det in enumerate(dets):
                    cx, cy = det.center
                    dist = math.hypot(cx - px, cy - py)
                    overlap = iou(pbox, det.bbox)
                    if dist > params.gate_radius and overlap < params.iou_gate:
                        continue
                    dt = frame - tr.last_frame
                    _, lx, ly = tr.centers[-1]
                    nvx, nvy = (cx - lx) / dt, (cy - ly) / dt
                    vel_change = math.hypot(nvx - vx, nvy - vy)
                    cost[i, j] = (
                        params.w_distance * dist / params.gate_radius
                        + params.w_iou * (1.0 - overlap)
                        + params.w_velocity * vel_change / v_scale
                    )
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if cost[i, j] >= _INADMISSIBLE:
                    continue
                active[i].add(frame, dets[j].bbox)
                assigned_dets.add(j)
        for j, det in enumerate(dets):
            if j not in assigned_dets:
                tracks.append(_Track(next_pid, frame, det.bbox))
                next_pid += 1
    return TrackSet(persons={t.pid: t.frames for t in tracks})


# ---------------------------------------------------------------------------
# Person clips
# ---------------------------------------------------------------------------

@dataclass
class PersonClip:
    """Fixed-length cropped frame sequence for one canonical person.

    ``frames`` has shape (T, H, W, 3), float32 in [0, 1]. ``fill_mask`` marks
    frames that were absent and filled by repeating the nearest present crop.
    """

    person_id: int
    frames: np.ndarray
    fill_mask: np.ndarray
    start_frame: int = 0
    fill_policy: str = "repeat-nearest"

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise ValidationError(f"clip frames must be (T, H, W, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("clip contains non-finite pixels")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValidationError("clip pixels must be normalized to [0, 1]")
        if self.fill_mask.shape != (self.frames.shape[0],):
            raise ValidationError("fill_mask length must equal clip length")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


class ArrayFrameSource:
    """Frame source backed by an in-memory (F, H, W, 3) uint8 array."""

    def __init__(self, frames: np.ndarray):
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def get_frame(self, index: int) -> np.ndarray:
        return self.frames[index]


class DirectoryFrameSource:
    """Frame source reading ``frame_%06d.png`` files from a directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.paths = sorted(self.directory.glob("frame_*.png"))
        if not self.paths:
            raise ValidationError(f"no frame_*.png files under {directory}")

    @property
    def n_frames(self) -> int:
        return len(self.paths)

    def get_frame(self, index: int) -> np.ndarray:
        img = cv2.imread(str(self.paths[index]), cv2.IMREAD_COLOR)
        if img is None:
            raise ParseError(f"unreadable frame image {self.paths[index]}")
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _crop_and_resize(frame: np.ndarray, bbox: BBox, size: tuple[int, int]) -> np.ndarray:
    h_img, w_img = frame.shape[:2]
    x, y, w, h = bbox
    x0 = int(np.clip(math.floor(x), 0, w_img - 1))
    y0 = int(np.clip(math.floor(y), 0, h_img - 1))
    x1 = int(np.clip(math.ceil(x + w), x0 + 1, w_img))
    y1 = int(np.clip(math.ceil(y + h), y0 + 1, h_img))
    crop = frame[y0:y1, x0:x1]
    out_h, out_w = size
    resized = cv2.resize(crop, (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    return resized.astype(np.float32) / 255.0


def crop_clips(frames_source, tracks: TrackSet, clip_length: int = 32,
               size: tuple[int, int] = (128, 64), start_frame: int = 0) -> list[PersonClip]:
    """One clip per canonical person over frames [start, start + clip_length).

    Frames where the person is absent repeat the nearest present crop (ties
    break toward the earlier frame) and are flagged in ``fill_mask``.
    """
    clips = []
    for pid in tracks.person_ids():
        frame_map = tracks.persons[pid]
        present = sorted(frame_map)
        out = np.zeros((clip_length, size[0], size[1], 3), dtype=np.float32)
        fill = np.zeros(clip_length, dtype=bool)
        for i in range(clip_length):
            f = start_frame + i
            if f in frame_map:
                src_f = f
            else:
                src_f = min(present, key=lambda p: (abs(p - f), p))
                fill[i] = True
            if src_f >= frames_source.n_frames:
                raise ValidationError(
                    f"track references frame {src_f}, source has {frames_source.n_frames}"
                )
            out[i] = _crop_and_resize(frames_source.get_frame(src_f), frame_map[src_f], size)
        clips.append(PersonClip(person_id=pid, frames=out, fill_mask=fill,
                                start_frame=start_frame))
    return clips


def save_clip(clip: PersonClip, directory) -> None:
    """Write a clip as numbered PNGs plus a JSON metadata sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(clip.length):
        img = (clip.frames[i] * 255.0).round().astype(np.uint8)
        cv2.imwrite(str(directory / f"frame_{i:06d}.png"),
                    cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    meta = {
        "person_id": clip.person_id,
        "start_frame": clip.start_frame,
        "length": clip.length,
        "fill_policy": clip.fill_policy,
        "fill_mask": clip.fill_mask.astype(int).tolist(),
    }
    (directory / "clip.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_clip(directory) -> PersonClip:
    directory = Path(directory)
    meta = json.loads((directory / "clip.json").read_text(encoding="utf-8"))
    source = DirectoryFrameSource(directory)
    frames = np.stack([
        source.get_frame(i).astype(np.float32) / 255.0 for i in range(meta["length"])
    ])
    return PersonClip(
        person_id=meta["person_id"],
        frames=frames,
        fill_mask=np.asarray(meta["fill_mask"], dtype=bool),
        start_frame=meta["start_frame"],
        fill_policy=meta["fill_policy"],
    )


# ---------------------------------------------------------------------------
# Clip / sensor alignment
# ---------------------------------------------------------------------------

@dataclass
class FusionSample:
    """One person's aligned (clip, sensor window, action label) triple."""

    clip: PersonClip
    sensors: VitalSignSeries
    label: str


def read_manifest(path) -> dict[int, str]:
    """Parse a ``person_id,subject_id`` CSV into a mapping."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "person_id,subject_id":
            raise ParseError(f"{path}: expected header 'person_id,subject_id', got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path}:{line_no}: expected two fields")
            mapping[int(parts[0])] = parts[1]
    return mapping


def write_manifest(mapping: dict[int, str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("person_id,subject_id\n")
        for pid in sorted(mapping):
            fh.write(f"{pid},{mapping[pid]}\n")


def align(clips: list[PersonClip], streams: dict[str, VitalSignSeries],
          mapping: dict[int, str], fps: float = 1.0,
          labels: dict[str, str] | None = None) -> list[FusionSample]:
    """Pair each clip with its subject's sensor window, one-to-one.

    The sensor series is truncated to the clip's time span (clip frames at
    ``fps``). The mapping must be a bijection between the clips' person ids
    and the stream subject ids; anything unmatched is an error naming ids.
    """
    clip_pids = [c.person_id for c in clips]
    orphan_persons = sorted(set(clip_pids) - set(mapping))
    if orphan_persons:
        raise AlignmentError(f"persons without a subject mapping: {orphan_persons}")
    orphans = [(pid, mapping[pid]) for pid in clip_pids if mapping[pid] not in streams]
    if orphans:
        raise AlignmentError(
            "persons without a sensor stream: "
            + ", ".join(f"person {pid} (subject {sid!r})" for pid, sid in orphans)
        )
    unused_streams = sorted(set(streams) - {mapping[pid] for pid in clip_pids})
    if unused_streams:
        raise AlignmentError(f"sensor streams without a person: {unused_streams}")
    targets = [mapping[pid] for pid in clip_pids]
    if len(set(targets)) != len(targets):
        dupes = sorted({s for s in targets if targets.count(s) > 1})
        raise AlignmentError(f"mapping is not injective; duplicated subjects: {dupes}")

    samples = []
    for clip in clips:
        subject = mapping[clip.person_id]
        series = streams[subject]
        t0 = clip.start_frame / fps
        t1 = (clip.start_frame + clip.length) / fps
        i0 = math.ceil(t0 * series.rate_hz - 1e-9)
        i1 = math.ceil(t1 * series.rate_hz - 1e-9)
        if i0 < 0 or i1 > series.timesteps or i1 <= i0:
            raise AlignmentError(
                f"subject {subject}: sensor stream (T={series.timesteps}) does not "
                f"cover clip window [{t0}, {t1}) s at {series.rate_hz} Hz"
            )
        window = series.samples[i0:i1]
        trimmed = VitalSignSeries(samples=window, rate_hz=series.rate_hz,
                                  label=series.label, subject_id=series.subject_id)
        label = labels[subject] if labels is not None else series.label
        samples.append(FusionSample(clip=clip, sensors=trimmed, label=label))
    return samples
