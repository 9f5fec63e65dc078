import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triagekit import vitalgen as vg
from triagekit.scenarios import (
    canonical_to_truth,
    identity_recovery,
    make_tracking_scenario,
)
from triagekit.tracksync import (
    ArrayFrameSource,
    Detection,
    SyncParams,
    TrackResynchronizer,
    TrackSet,
    align,
    crop_clips,
    ingest_detections,
    iou,
    load_clip,
    read_manifest,
    resynchronize,
    save_clip,
    write_detections,
    write_manifest,
)
from triagekit.validation import AlignmentError, ParseError, ValidationError


def det(frame, x, y, w=20.0, h=40.0, raw=0, conf=0.9):
    return Detection(frame=frame, bbox=(x, y, w, h), confidence=conf, raw_track_id=raw)


class TestDetection:
    def test_zero_width_rejected(self):
        with pytest.raises(ValidationError):
            det(0, 0, 0, w=0.0)

    def test_negative_frame_rejected(self):
        with pytest.raises(ValidationError):
            det(-1, 0, 0)

    def test_confidence_range(self):
        with pytest.raises(ValidationError):
            Detection(frame=0, bbox=(0, 0, 1, 1), confidence=1.5, raw_track_id=0)


class TestIou:
    def test_identical_boxes(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert iou((0, 0, 10, 10), (100, 100, 5, 5)) == 0.0

    def test_half_overlap(self):
        assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(50.0 / 150.0)


class TestIngest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        assert ingest_detections(path) == []

    def test_shuffled_frames_sorted(self, tmp_path):
        dets = [det(f, 10.0 * f, 5.0, raw=1) for f in (4, 0, 2, 1, 3)]
        path = tmp_path / "d.jsonl"
        write_detections(dets, path)
        frames = [d.frame for d in ingest_detections(path)]
        assert frames == sorted(frames)

    def test_zero_width_record_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"frame": 0, "raw_id": 1, "x": 1, "y": 1, "w": 5, "h": 5, "conf": 0.9}\n'
            '{"frame": 1, "raw_id": 1, "x": 1, "y": 1, "w": 0, "h": 5, "conf": 0.9}\n'
        )
        with pytest.raises(ParseError, match=":2"):
            ingest_detections(path)

    def test_malformed_json_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"frame": 0, "raw_id": 1, "x": 1, "y": 1, "w": 5, "h": 5, "conf": 0.9}\nnot json\n')
        with pytest.raises(ParseError, match=":2"):
            ingest_detections(path)


class TestResynchronize:
    def test_single_stable_track_unchanged(self):
        dets = [det(f, 5.0 * f, 10.0, raw=7) for f in range(20)]
        tracks = resynchronize(dets)
        assert tracks.n_persons == 1
        pid = tracks.person_ids()[0]
        for f in range(20):
            assert tracks.bbox_at(pid, f) == (5.0 * f, 10.0, 20.0, 40.0)

    def test_crossing_with_raw_id_swap_preserved(self):
        scenario = make_tracking_scenario(seed=0, n_persons=2, with_crossing=True,
                                          gap_frames=5)
        tracks = resynchronize(scenario.detections)
        assert identity_recovery(tracks, scenario) == 1.0

    def test_gap_reentry_resumes_same_id(self):
        dets = [det(f, 4.0 * f, 30.0, raw=1) for f in range(30)
                if not (10 <= f < 20)]  # absent 10 frames, keeps moving
        tracks = resynchronize(dets)
        assert tracks.n_persons == 1

    def test_gap_beyond_limit_spawns_new_id(self):
        dets = [det(f, 4.0 * f, 30.0, raw=1) for f in range(40)
                if not (10 <= f < 30)]  # 20 missing frames > max_gap 15
        tracks = resynchronize(dets)
        assert tracks.n_persons == 2

    def test_permutation_invariance(self):
        scenario = make_tracking_scenario(seed=5, n_persons=4, noise_sigma=1.0)
        base = resynchronize(scenario.detections)
        rng = np.random.default_rng(0)
        for _ in range(3):
            shuffled = list(scenario.detections)
            rng.shuffle(shuffled)
            assert resynchronize(shuffled).persons == base.persons

    def test_pathological_input_never_crashes(self):
        # many detections stacked on one spot, inconsistent sizes
        dets = []
        rng = np.random.default_rng(1)
        for f in range(10):
            for k in range(5):
                dets.append(det(f, 50 + rng.normal(0, 1), 50 + rng.normal(0, 1),
                                w=5 + k, h=5 + k, raw=k))
        tracks = resynchronize(dets)
        assert tracks.n_persons >= 5

    def test_estimator_wrapper_matches_function(self):
        scenario = make_tracking_scenario(seed=2, n_persons=3)
        wrapped = TrackResynchronizer().transform(scenario.detections)
        plain = resynchronize(scenario.detections, SyncParams())
        assert wrapped.persons == plain.persons

    def test_get_set_params(self):
        est = TrackResynchronizer()
        params = est.get_params()
        assert params["max_gap_frames"] == 15
        est.set_params(max_gap_frames=5)
        assert est.get_params()["max_gap_frames"] == 5
        with pytest.raises(ValidationError):
            est.set_params(bogus=1)


class TestIdentityRecoveryBars:
    def test_noiseless_scenarios_exact(self):
        for seed in range(20):
            scenario = make_tracking_scenario(seed, n_persons=2 + seed % 3,
                                              gap_frames=5 + seed % 11)
            tracks = resynchronize(scenario.detections)
            assert identity_recovery(tracks, scenario) == 1.0, f"seed {seed}"

    def test_noisy_scenarios_above_95_percent(self):
        scores = []
        for seed in range(20):
            scenario = make_tracking_scenario(seed, n_persons=2 + seed % 3,
                                              gap_frames=5 + seed % 11,
                                              noise_sigma=2.0)
            tracks = resynchronize(scenario.detections)
            scores.append(identity_recovery(tracks, scenario))
        assert np.mean(scores) >= 0.95


class TestTrackSet:
    def test_duplicate_bbox_in_frame_rejected(self):
        with pytest.raises(ValidationError):
            TrackSet(persons={1: {0: (0.0, 0.0, 5.0, 5.0)},
                              2: {0: (0.0, 0.0, 5.0, 5.0)}})

    def test_presence_flags(self):
        tracks = TrackSet(persons={1: {0: (0, 0, 5, 5), 2: (2, 0, 5, 5)}})
        assert tracks.presence(1, 0, 4).tolist() == [True, False, True, False]


def gray_frames(n=40, h=120, w=160):
    rng = np.random.default_rng(0)
    return rng.integers(0, 255, size=(n, h, w, 3), dtype=np.uint8)


class TestCropClips:
    def test_three_persons_three_clips(self):
        persons = {pid: {f: (10.0 * pid, 20.0 * pid, 12.0, 24.0) for f in range(32)}
                   for pid in (1, 2, 3)}
        clips = crop_clips(ArrayFrameSource(gray_frames()), TrackSet(persons=persons),
                           clip_length=32, size=(64, 32))
        assert len(clips) == 3
        for clip in clips:
            assert clip.frames.shape == (32, 64, 32, 3)
            assert not clip.fill_mask.any()

    def test_absent_tail_repeats_last_crop_flagged(self):
        persons = {1: {f: (5.0 + f, 10.0, 12.0, 24.0) for f in range(16)}}
        clips = crop_clips(ArrayFrameSource(gray_frames()), TrackSet(persons=persons),
                           clip_length=32, size=(32, 16))
        clip = clips[0]
        assert clip.fill_mask.tolist() == [False] * 16 + [True] * 16
        for f in range(16, 32):
            assert np.array_equal(clip.frames[f], clip.frames[15])

    def test_zero_persons_empty(self):
        clips = crop_clips(ArrayFrameSource(gray_frames()), TrackSet(persons={}),
                           clip_length=8, size=(16, 8))
        assert clips == []

    def test_pixels_normalized(self):
        persons = {1: {f: (0.0, 0.0, 30.0, 30.0) for f in range(8)}}
        clip = crop_clips(ArrayFrameSource(gray_frames()), TrackSet(persons=persons),
                          clip_length=8, size=(16, 8))[0]
        assert clip.frames.min() >= 0.0 and clip.frames.max() <= 1.0

    def test_save_load_roundtrip(self, tmp_path):
        persons = {1: {f: (4.0, 6.0, 20.0, 30.0) for f in range(6)}}
        clip = crop_clips(ArrayFrameSource(gray_frames()), TrackSet(persons=persons),
                          clip_length=6, size=(24, 12))[0]
        save_clip(clip, tmp_path / "person_001")
        loaded = load_clip(tmp_path / "person_001")
        assert loaded.person_id == clip.person_id
        assert loaded.fill_mask.tolist() == clip.fill_mask.tolist()
        # pixels quantized to 8 bits on save
        assert np.allclose(loaded.frames, clip.frames, atol=1.0 / 255.0)


def toy_clip(pid, length=8):
    frames = np.zeros((length, 8, 4, 3), dtype=np.float32)
    persons = {pid: {f: (0.0, 0.0, 4.0, 8.0) for f in range(length)}}
    return crop_clips(ArrayFrameSource(gray_frames(length, 16, 16)),
                      TrackSet(persons=persons), clip_length=length, size=(8, 4))[0]


def toy_series(subject, timesteps=40, rate=1.0):
    rng = np.random.default_rng(hash(subject) % 2**32)
    samples = np.column_stack([
        rng.uniform(60, 100, timesteps),
        rng.uniform(10, 25, timesteps),
        rng.uniform(0, 40, timesteps),
        rng.uniform(0.1, 0.6, timesteps),
    ])
    return vg.VitalSignSeries(samples=samples, rate_hz=rate, label="running",
                              subject_id=subject)


class TestAlign:
    def test_bijection_pairs_all(self):
        clips = [toy_clip(pid) for pid in (1, 2, 3)]
        streams = {f"s{i}": toy_series(f"s{i}") for i in (1, 2, 3)}
        mapping = {1: "s1", 2: "s2", 3: "s3"}
        samples = align(clips, streams, mapping, fps=1.0,
                        labels={"s1": "running", "s2": "crawling", "s3": "limping"})
        assert len(samples) == 3
        assert [s.label for s in samples] == ["running", "crawling", "limping"]

    def test_missing_stream_names_orphan_person(self):
        clips = [toy_clip(pid) for pid in (1, 2, 3)]
        streams = {"s1": toy_series("s1"), "s2": toy_series("s2")}
        with pytest.raises(AlignmentError, match="person 3"):
            align(clips, streams, {1: "s1", 2: "s2", 3: "s3"})

    def test_unmapped_person_rejected(self):
        clips = [toy_clip(1), toy_clip(2)]
        streams = {"s1": toy_series("s1")}
        with pytest.raises(AlignmentError, match=r"\[2\]"):
            align(clips, streams, {1: "s1"})

    def test_unused_stream_rejected(self):
        clips = [toy_clip(1)]
        streams = {"s1": toy_series("s1"), "s9": toy_series("s9")}
        with pytest.raises(AlignmentError, match="s9"):
            align(clips, streams, {1: "s1"})

    def test_duplicate_subject_rejected(self):
        clips = [toy_clip(1), toy_clip(2)]
        streams = {"s1": toy_series("s1")}
        with pytest.raises(AlignmentError, match="injective"):
            align(clips, streams, {1: "s1", 2: "s1"})

    def test_window_truncation_hand_computed(self):
        # clip: frames [4, 12) at 2 fps -> [2.0 s, 6.0 s); at 1 Hz -> samples 2..5
        length = 8
        frames = gray_frames(16, 16, 16)
        persons = {1: {f: (0.0, 0.0, 4.0, 8.0) for f in range(16)}}
        clip = crop_clips(ArrayFrameSource(frames), TrackSet(persons=persons),
                          clip_length=length, size=(8, 4), start_frame=4)[0]
        series = toy_series("s1", timesteps=40, rate=1.0)
        sample = align([clip], {"s1": series}, {1: "s1"}, fps=2.0)[0]
        assert sample.sensors.timesteps == 4
        assert np.array_equal(sample.sensors.samples, series.samples[2:6])

    def test_short_stream_rejected(self):
        clip = toy_clip(1, length=8)
        series = toy_series("s1", timesteps=4)
        with pytest.raises(AlignmentError, match="does not.*cover|cover"):
            align([clip], {"s1": series}, {1: "s1"}, fps=1.0)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        mapping = {1: "alpha", 2: "beta"}
        path = tmp_path / "manifest.csv"
        write_manifest(mapping, path)
        assert read_manifest(path) == mapping

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("nope\n1,s1\n")
        with pytest.raises(ParseError):
            read_manifest(path)


class TestCanonicalToTruth:
    def test_recovered_mapping_matches_scene(self):
        scenario = make_tracking_scenario(seed=3, n_persons=3)
        tracks = resynchronize(scenario.detections)
        mapping = canonical_to_truth(tracks, scenario.detections, scenario.truth)
        assert sorted(mapping.values()) == [1, 2, 3]
