"""Command-line pipeline entry point.

Each subcommand writes its artifacts under ``--out`` together with a
``manifest.json`` recording the effective configuration, seeds, and content
hashes of the inputs, so any artifact can be regenerated from its manifest.
Errors print one machine-parsable JSON line to stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import time
from pathlib import Path

import cv2
import numpy as np

from . import vitalgen as vg
from .cvae import VitalSignAugmenter, action_to_clinical, proximity_map
from .cvae import write_history_csv as write_cvae_history
from .fusion import (
    ALL_ROWS,
    FusionActionClassifier,
    complexity_report,
    gradcam_heatmaps,
    overlay_heatmap,
    run_ablation,
    stratified_split,
    write_ablation_csv,
)
from .fusion import write_history_csv as write_fusion_history
from .gateway import build_packets, serve, write_packets
from .scenarios import canonical_to_truth, render_scene
from .tracksync import (
    DirectoryFrameSource,
    TrackResynchronizer,
    align,
    crop_clips,
    ingest_detections,
    load_clip,
    read_manifest,
    save_clip,
    write_detections,
    write_manifest,
)
from .validation import TriageKitError, ValidationError


# ---------------------------------------------------------------------------
# run-directory plumbing
# ---------------------------------------------------------------------------

def _file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_inputs(paths) -> dict[str, str]:
    hashes = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            digest = hashlib.sha256()
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    digest.update(f.relative_to(p).as_posix().encode())
                    digest.update(bytes.fromhex(_file_sha256(f)))
            hashes[str(p)] = digest.hexdigest()
        elif p.is_file():
            hashes[str(p)] = _file_sha256(p)
    return hashes


def write_run_manifest(out_dir: Path, subcommand: str, config: dict,
                       inputs=(), outputs=()) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": {k: v for k, v in sorted(config.items())},
        "inputs": _hash_inputs(inputs),
        "outputs": sorted(str(o) for o in outputs),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# `out` names the run directory itself, so it stays out of the recorded config
def _config_of(args, skip=("func", "config", "out")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# corpus/scene assembly shared by subcommands
# ---------------------------------------------------------------------------

def _scene_groups(field_corpus, persons_per_scene: int):
    """Round-robin the corpus into fixed-size scene casts covering all classes."""
    actions = list(vg.ACTION_LABELS)
    by_action = {a: [s for s in field_corpus if s.label == a] for a in actions}
    per_class = min(len(v) for v in by_action.values())
    total = per_class * len(actions)
    if total % persons_per_scene != 0:
        raise ValidationError(
            f"per-class count {per_class} x {len(actions)} classes must divide "
            f"evenly into scenes of {persons_per_scene}"
        )
    counters = {a: 0 for a in actions}
    groups = []
    for i in range(total // persons_per_scene):
        cast = []
        for k in range(persons_per_scene):
            action = actions[(persons_per_scene * i + k) % len(actions)]
            series = by_action[action][counters[action]]
            counters[action] += 1
            cast.append((k + 1, series.subject_id, action))
        groups.append(cast)
    return groups


def _build_scene_artifacts(out: Path, field_corpus, args) -> None:
    scenes_dir = out / "scenes"
    groups = _scene_groups(field_corpus, args.scene_persons)
    n_frames = args.clip_frames + 4
    for i, cast in enumerate(groups):
        scene = render_scene(seed=args.seed * 10_000 + i, persons=cast,
                             n_frames=n_frames, ambiguous_video=args.ambiguous)
        scene_dir = scenes_dir / f"scene_{i:03d}"
        frames_dir = scene_dir / "frames"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for f in range(n_frames):
            cv2.imwrite(str(frames_dir / f"frame_{f:06d}.png"),
                        cv2.cvtColor(scene.frames[f], cv2.COLOR_RGB2BGR))
        write_detections(scene.detections, scene_dir / "detections.jsonl")
        with open(scene_dir / "truth.csv", "w", encoding="utf-8") as fh:
            fh.write("detection_index,person_id\n")
            for j, pid in enumerate(scene.truth):
                fh.write(f"{j},{pid}\n")
        (scene_dir / "scene.json").write_text(json.dumps({
            "persons": [{"person_id": p, "subject_id": s, "action": a} for p, s, a in cast],
            "n_frames": n_frames,
            "ambiguous_video": args.ambiguous,
        }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_scene_meta(scene_dir: Path) -> dict:
    return json.loads((scene_dir / "scene.json").read_text(encoding="utf-8"))


def _scene_dirs(scenes_root: Path) -> list[Path]:
    dirs = sorted(p for p in Path(scenes_root).glob("scene_*") if p.is_dir())
    if not dirs:
        raise ValidationError(f"no scene_* directories under {scenes_root}")
    return dirs


def _build_samples(clips_root: Path, scenes_root: Path, sensors_dir: Path,
                   fps: float, rate_hz: float):
    """Assemble FusionSamples from resync clips, scene labels, and sensor CSVs."""
    streams = {s.subject_id: s for s in vg.read_corpus(sensors_dir, rate_hz=rate_hz)}
    samples = []
    for scene_dir in _scene_dirs(scenes_root):
        meta = _load_scene_meta(scene_dir)
        labels = {p["subject_id"]: p["action"] for p in meta["persons"]}
        clip_scene_dir = Path(clips_root) / scene_dir.name
        mapping = read_manifest(clip_scene_dir / "manifest.csv")
        clips = [load_clip(d) for d in sorted(clip_scene_dir.glob("person_*"))]
        scene_streams = {sid: streams[sid] for sid in mapping.values()}
        samples.extend(align(clips, scene_streams, mapping, fps=fps, labels=labels))
    return samples


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    profiles = vg.AMBIGUOUS_FIELD_PROFILES if args.ambiguous else vg.FIELD_PROFILES
    spec = vg.GeneratorSpec(seed=args.seed, per_class=args.per_class,
                            timesteps=args.timesteps, rate_hz=args.rate_hz,
                            profiles=profiles)
    field = vg.generate_field_corpus(spec)
    clinical_spec = vg.GeneratorSpec(seed=args.seed + 1, per_class=args.clinical_per_class,
                                     timesteps=args.timesteps, rate_hz=args.rate_hz)
    clinical = vg.generate_clinical_reference(clinical_spec)
    vg.write_corpus(field, out / "field")
    vg.write_corpus(clinical, out / "clinical")
    _build_scene_artifacts(out, field, args)
    write_run_manifest(out, "gen-data", _config_of(args),
                       outputs=["field", "clinical", "scenes"])
    print(f"gen-data: {len(field)} field series, {len(clinical)} clinical series, "
          f"{len(list((out / 'scenes').iterdir()))} scenes -> {out}")
    return 0


def cmd_resync(args) -> int:
    out = _out_dir(args)
    resync = TrackResynchronizer(max_gap_frames=args.max_gap,
                                 gate_radius=args.gate_radius,
                                 velocity_window=args.velocity_window,
                                 iou_gate=args.iou_gate)
    total_clips = 0
    for scene_dir in _scene_dirs(Path(args.scenes)):
        detections = ingest_detections(scene_dir / "detections.jsonl")
        tracks = resync.transform(detections)
        frames = DirectoryFrameSource(scene_dir / "frames")
        clips = crop_clips(frames, tracks, clip_length=args.clip_frames,
                           size=(args.clip_height, args.clip_width))
        truth = _read_truth(scene_dir / "truth.csv")
        mapping_truth = canonical_to_truth(tracks, detections, truth)
        meta = _load_scene_meta(scene_dir)
        by_pid = {p["person_id"]: p["subject_id"] for p in meta["persons"]}
        manifest = {canon: by_pid[true_pid] for canon, true_pid in mapping_truth.items()}
        scene_out = out / scene_dir.name
        for clip in clips:
            save_clip(clip, scene_out / f"person_{clip.person_id:03d}")
        write_manifest(manifest, scene_out / "manifest.csv")
        total_clips += len(clips)
    write_run_manifest(out, "resync", _config_of(args), inputs=[args.scenes],
                       outputs=[p.name for p in sorted(out.glob('scene_*'))])
    print(f"resync: wrote {total_clips} clips -> {out}")
    return 0


def _read_truth(path: Path) -> list[int]:
    lines = path.read_text(encoding="utf-8").strip().splitlines()[1:]
    return [int(line.split(",")[1]) for line in lines if line]


def cmd_train_cvvitae(args) -> int:
    out = _out_dir(args)
    corpus = vg.read_corpus(args.clinical, rate_hz=args.rate_hz)
    model = VitalSignAugmenter(latent_dim=args.latent_dim, alpha=args.alpha,
                               learning_rate=args.lr, epochs=args.epochs,
                               batch_size=args.batch_size,
                               hidden_size=args.hidden_size, seed=args.seed)
    model.fit(corpus)
    ckpt = out / "augmenter.ckpt"
    model.save(ckpt)
    write_cvae_history(model.history_, out / "loss_history.csv")
    write_run_manifest(out, "train-cvvitae", _config_of(args), inputs=[args.clinical],
                       outputs=["augmenter.ckpt", "loss_history.csv"])
    h = model.history_
    print(f"train-cvvitae: reconstruction {h[0].reconstruction:.4f} -> "
          f"{h[-1].reconstruction:.4f} over {len(h)} epochs -> {ckpt}")
    return 0


def cmd_augment(args) -> int:
    out = _out_dir(args)
    model = VitalSignAugmenter.load(args.model)
    corpus = vg.read_corpus(args.field, rate_hz=args.rate_hz)
    aug_dir = out / "augmented"
    aug_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for series in corpus:
        target = action_to_clinical(series.label)
        if target is None:
            output = series
        else:
            output = model.augment(series, target, seed=args.seed,
                                   noise_scale=args.noise_scale)
        vg.write_csv(output, aug_dir / f"{series.subject_id}.csv")
        rows.append((series.subject_id, series.label, target or "raw"))
    with open(out / "augment_map.csv", "w", encoding="utf-8") as fh:
        fh.write("subject_id,action,target\n")
        for subject, action, target in rows:
            fh.write(f"{subject},{action},{target}\n")
    write_run_manifest(out, "augment", _config_of(args),
                       inputs=[args.model, args.field],
                       outputs=["augmented", "augment_map.csv"])
    n_aug = sum(1 for _, _, t in rows if t != "raw")
    print(f"augment: {n_aug}/{len(rows)} series rewritten -> {aug_dir}")
    return 0


def cmd_proximity_report(args) -> int:
    out = _out_dir(args)
    model = VitalSignAugmenter.load(args.model)
    field = vg.read_corpus(args.field, rate_hz=args.rate_hz)
    reference = vg.read_corpus(args.reference, rate_hz=args.rate_hz)
    augmented = []
    for series in field:
        target = action_to_clinical(series.label)
        if target is not None:
            augmented.append(model.augment(series, target, seed=args.seed))
    if not augmented:
        raise ValidationError("field corpus contains no augmentable actions")
    matrix = proximity_map(augmented, reference)
    matrix.write_csv(out / "proximity.csv")
    lines = []
    for a in matrix.augmented_classes:
        lines.append(f"{a}: closest={matrix.closest_class(a)} "
                     f"(zscored={matrix.closest_class(a, zscore=True)})")
    (out / "proximity_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_run_manifest(out, "proximity-report", _config_of(args),
                       inputs=[args.model, args.field, args.reference],
                       outputs=["proximity.csv", "proximity_summary.txt"])
    print("proximity-report: " + "; ".join(lines))
    return 0


def cmd_train_fusion(args) -> int:
    out = _out_dir(args)
    samples = _build_samples(args.clips, args.scenes, args.sensors,
                             fps=args.fps, rate_hz=args.rate_hz)
    train_idx, test_idx = stratified_split(samples, args.test_fraction, args.seed)
    clf = FusionActionClassifier(mask=args.mask, learning_rate=args.lr,
                                 epochs=args.epochs, batch_size=args.batch_size,
                                 conv_channels=(args.conv1, args.conv2),
                                 dropout=args.dropout, seed=args.seed)
    clf.fit([samples[i] for i in train_idx])
    ckpt = out / "fusion.ckpt"
    clf.save(ckpt)
    write_fusion_history(clf.history_, out / "history.csv")
    (out / "split.json").write_text(json.dumps(
        {"train": train_idx, "test": test_idx, "seed": args.seed,
         "test_fraction": args.test_fraction}, sort_keys=True) + "\n", encoding="utf-8")
    report = complexity_report(clf.model_,
                               clip_shape=samples[0].clip.frames.shape[:3],
                               sensor_timesteps=samples[0].sensors.timesteps)
    (out / "complexity.txt").write_text(report.pretty() + "\n", encoding="utf-8")
    if args.session_out:
        _assemble_session(Path(args.session_out), args, clf, ckpt)
    write_run_manifest(out, "train-fusion", _config_of(args),
                       inputs=[args.clips, args.scenes, args.sensors],
                       outputs=["fusion.ckpt", "history.csv", "split.json", "complexity.txt"])
    print(f"train-fusion: {len(train_idx)} train / {len(test_idx)} test, "
          f"final loss {clf.history_[-1]['loss']:.4f}, "
          f"{report.parameters:,} parameters -> {ckpt}")
    return 0


def _assemble_session(session_dir: Path, args, clf, ckpt: Path) -> None:
    """Bundle the first scene plus full-length sensor streams into a session."""
    scene_dir = _scene_dirs(Path(args.scenes))[0]
    meta = _load_scene_meta(scene_dir)
    clip_scene = Path(args.clips) / scene_dir.name
    mapping = read_manifest(clip_scene / "manifest.csv")
    session_dir.mkdir(parents=True, exist_ok=True)
    streams = {s.subject_id: s for s in vg.read_corpus(args.sensors, rate_hz=args.rate_hz)}
    subjects = {pid: sid for pid, sid in mapping.items()}
    write_packets(build_packets({sid: streams[sid] for sid in subjects.values()}),
                  session_dir / "packets.jsonl")
    for pid in subjects:
        src = clip_scene / f"person_{pid:03d}"
        dst = session_dir / "clips" / f"person_{pid:03d}"
        if dst.exists():
            shutil.rmtree(dst)
        shutil.copytree(src, dst)
    shutil.copy(ckpt, session_dir / "fusion.ckpt")
    write_manifest(subjects, session_dir / "manifest.csv")
    (session_dir / "session.json").write_text(json.dumps({
        "schema_version": 1,
        "rate_hz": args.rate_hz,
        "fps": args.fps,
        "window_timesteps": args.clip_frames,
        "model": "fusion.ckpt",
        "persons": [{"person_id": pid, "subject_id": sid} for pid, sid in sorted(subjects.items())],
        "actions": {p["subject_id"]: p["action"] for p in meta["persons"]},
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    samples = _build_samples(args.clips, args.scenes, args.sensors,
                             fps=args.fps, rate_hz=args.rate_hz)
    clf = FusionActionClassifier.load(args.model)
    if args.split:
        split = json.loads(Path(args.split).read_text(encoding="utf-8"))
        test_idx = split["test"]
    else:
        _, test_idx = stratified_split(samples, args.test_fraction, args.seed)
    result = clf.evaluate([samples[i] for i in test_idx])
    result.write_csv(out / "confusion.csv")
    (out / "accuracy.txt").write_text(f"{result.accuracy!r}\n", encoding="utf-8")
    write_run_manifest(out, "evaluate", _config_of(args),
                       inputs=[args.model, args.clips, args.scenes, args.sensors],
                       outputs=["confusion.csv", "accuracy.txt"])
    print(f"evaluate: accuracy {result.accuracy:.4f} on {result.n_test} samples -> {out}")
    return 0


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    samples_raw = _build_samples(args.clips, args.scenes, args.sensors,
                                 fps=args.fps, rate_hz=args.rate_hz)
    samples_aug = None
    if args.sensors_augmented:
        samples_aug = _build_samples(args.clips, args.scenes, args.sensors_augmented,
                                     fps=args.fps, rate_hz=args.rate_hz)
    rows = run_ablation(samples_raw, samples_aug,
                        test_fraction=args.test_fraction, seed=args.seed,
                        learning_rate=args.lr, epochs=args.epochs,
                        batch_size=args.batch_size,
                        conv_channels=(args.conv1, args.conv2))
    write_ablation_csv(rows, out / "ablation.csv")
    write_run_manifest(out, "ablate", _config_of(args),
                       inputs=[p for p in (args.clips, args.scenes, args.sensors,
                                           args.sensors_augmented) if p],
                       outputs=["ablation.csv"])
    print(f"ablate: {len(rows)} rows -> {out / 'ablation.csv'}")
    return 0


def cmd_explain(args) -> int:
    out = _out_dir(args)
    clf = FusionActionClassifier.load(args.model)
    clip = load_clip(args.clip)
    sensors = None
    if args.sensors:
        sensors = vg.read_csv(args.sensors, rate_hz=args.rate_hz).samples[: clip.length]
    heatmaps = gradcam_heatmaps(clf.model_, clip.frames, args.target, sensors)
    heat_dir = out / "heatmaps"
    heat_dir.mkdir(parents=True, exist_ok=True)
    for i in range(clip.length):
        gray = (heatmaps[i] * 255.0).round().astype(np.uint8)
        cv2.imwrite(str(heat_dir / f"heat_{i:06d}.png"), gray)
        blended = overlay_heatmap(clip.frames[i], heatmaps[i])
        cv2.imwrite(str(heat_dir / f"overlay_{i:06d}.png"),
                    cv2.cvtColor((blended * 255.0).round().astype(np.uint8),
                                 cv2.COLOR_RGB2BGR))
    write_run_manifest(out, "explain", _config_of(args),
                       inputs=[args.model, args.clip],
                       outputs=["heatmaps"])
    print(f"explain: {clip.length} heatmap frames for {args.target!r} -> {heat_dir}")
    return 0


def cmd_serve(args) -> int:
    serve(args.session, host=args.host, port=args.port, speed=args.speed,
          loss_rate=args.loss_rate, seed=args.seed, log_path=args.log,
          wait_for_client=args.wait_for_client)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, *names):
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0)
    if "rate" in names:
        p.add_argument("--rate-hz", type=float, default=1.0, dest="rate_hz")
    if "fps" in names:
        p.add_argument("--fps", type=float, default=1.0)
    if "clip" in names:
        p.add_argument("--clip-frames", type=int, default=32, dest="clip_frames")
        p.add_argument("--clip-height", type=int, default=128, dest="clip_height")
        p.add_argument("--clip-width", type=int, default=64, dest="clip_width")
    if "fusion-train" in names:
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--batch-size", type=int, default=16, dest="batch_size")
        p.add_argument("--conv1", type=int, default=16)
        p.add_argument("--conv2", type=int, default=32)
        p.add_argument("--test-fraction", type=float, default=0.2, dest="test_fraction")


def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triagekit",
        description="casualty-triage pipeline: data generation, augmentation, "
                    "resync, fusion training, explainability, and serving",
    )
    parser.add_argument("--config", help="key = value defaults file", default=None)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="generate field/clinical corpora and scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=12, dest="per_class")
    p.add_argument("--clinical-per-class", type=int, default=30, dest="clinical_per_class")
    p.add_argument("--timesteps", type=int, default=120)
    p.add_argument("--scene-persons", type=int, default=3, dest="scene_persons")
    p.add_argument("--ambiguous", action="store_true",
                   help="injury trio shares healthy sensor profiles and one video archetype")
    _add_common(p, "seed", "rate", "clip")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("resync", help="rebuild canonical tracks and crop person clips")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-gap", type=int, default=15, dest="max_gap")
    p.add_argument("--gate-radius", type=float, default=50.0, dest="gate_radius")
    p.add_argument("--velocity-window", type=int, default=5, dest="velocity_window")
    p.add_argument("--iou-gate", type=float, default=0.3, dest="iou_gate")
    _add_common(p, "clip")
    p.set_defaults(func=cmd_resync)

    p = sub.add_parser("train-cvvitae", help="train the vital-sign augmenter")
    p.add_argument("--clinical", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--latent-dim", type=int, default=16, dest="latent_dim")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p.add_argument("--hidden-size", type=int, default=32, dest="hidden_size")
    _add_common(p, "seed", "rate")
    p.set_defaults(func=cmd_train_cvvitae)

    p = sub.add_parser("augment", help="rewrite injury-action sensor streams")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-scale", type=float, default=0.0, dest="noise_scale")
    _add_common(p, "seed", "rate")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("proximity-report", help="augmented-vs-reference channel deviations")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, "seed", "rate")
    p.set_defaults(func=cmd_proximity_report)

    p = sub.add_parser("train-fusion", help="train the late-fusion action classifier")
    p.add_argument("--clips", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--sensors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default="video+sensor")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--session-out", default=None, dest="session_out",
                   help="also assemble a servable session directory")
    p.add_argument("--clip-frames", type=int, default=32, dest="clip_frames")
    _add_common(p, "seed", "rate", "fps", "fusion-train")
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("evaluate", help="accuracy and confusion matrix on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--sensors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, help="split.json from train-fusion")
    p.add_argument("--test-fraction", type=float, default=0.2, dest="test_fraction")
    _add_common(p, "seed", "rate", "fps")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="per-modality accuracy table")
    p.add_argument("--clips", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--sensors", required=True)
    p.add_argument("--sensors-augmented", default=None, dest="sensors_augmented")
    p.add_argument("--out", required=True)
    _add_common(p, "seed", "rate", "fps", "fusion-train")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("explain", help="write per-frame class activation heatmaps")
    p.add_argument("--model", required=True)
    p.add_argument("--clip", required=True, help="clip directory from resync")
    p.add_argument("--target", required=True, choices=list(vg.ACTION_LABELS))
    p.add_argument("--sensors", default=None, help="optional sensor CSV for the forward pass")
    p.add_argument("--out", required=True)
    _add_common(p, "rate")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve", help="stream a session to operator consoles")
    p.add_argument("--session", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--loss-rate", type=float, default=0.0, dest="loss_rate")
    p.add_argument("--log", default=None, help="decision log path (default: in session dir)")
    p.add_argument("--wait-for-client", action="store_true", dest="wait_for_client",
                   help="hold the replay until the first console connects")
    _add_common(p, "seed")
    p.set_defaults(func=cmd_serve)

    if config_defaults:
        for action in sub.choices.values():
            known = {a.dest for a in action._actions}
            action.set_defaults(**{k: v for k, v in config_defaults.items() if k in known})
    return parser


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; keys use dashes or underscores."""
    values = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{line_no}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        raw = raw.strip()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        values[key] = value
    return values


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    config_defaults = {}
    if known.config:
        try:
            config_defaults = load_config_file(known.config)
        except (OSError, TriageKitError) as exc:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
            return 2
    parser = build_parser(config_defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TriageKitError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
