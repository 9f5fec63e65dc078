import numpy as np
import pytest
import torch

from triagekit.fusion import (
    FUSED_DIM,
    SENSOR_DIM,
    VIDEO_DIM,
    FusionHead,
    FusionModel,
    ModalityMask,
    SensorEncoder,
    VideoEncoder,
    fuse,
    prediction_from_logits,
)
from triagekit.validation import ConfigurationError, ShapeError, ValidationError
from triagekit.vitalgen import ACTION_LABELS


class TestModalityMask:
    def test_all_disabled_rejected(self):
        with pytest.raises(ConfigurationError):
            ModalityMask(video=False, heart_rate=False, breathing_rate=False,
                         posture=False, movement=False)

    def test_name_roundtrip(self):
        mask = ModalityMask(video=False, heart_rate=True, breathing_rate=True,
                            posture=False, movement=False)
        assert mask.name == "hr+br"
        assert ModalityMask.from_name("hr+br") == mask

    def test_sensor_alias_enables_all_channels(self):
        mask = ModalityMask.from_name("video+sensor")
        assert mask == ModalityMask()

    def test_unknown_token_rejected(self):
        with pytest.raises(ConfigurationError):
            ModalityMask.from_name("video+thermal")


class TestFuse:
    def test_concatenated_length(self):
        fused = fuse(np.ones(VIDEO_DIM), np.zeros(SENSOR_DIM))
        assert fused.shape == (FUSED_DIM,)

    def test_video_block_first(self):
        v = np.arange(VIDEO_DIM, dtype=float)
        s = -np.arange(SENSOR_DIM, dtype=float)
        fused = fuse(v, s)
        assert np.array_equal(fused[:VIDEO_DIM], v)
        assert np.array_equal(fused[VIDEO_DIM:], s)

    def test_wrong_dims_rejected(self):
        with pytest.raises(ShapeError):
            fuse(np.ones(100), np.zeros(SENSOR_DIM))
        with pytest.raises(ShapeError):
            fuse(np.ones(VIDEO_DIM), np.zeros(10))


class TestPrediction:
    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = prediction_from_logits(rng.normal(0, 5, 6))
            assert pred.probabilities.sum() == pytest.approx(1.0, abs=1e-6)
            assert (pred.probabilities >= 0).all()

    def test_argmax_tie_prefers_lowest_index(self):
        pred = prediction_from_logits(np.zeros(6))
        assert pred.label == ACTION_LABELS[0]

    def test_wrong_logit_count_rejected(self):
        with pytest.raises(ShapeError):
            prediction_from_logits(np.zeros(5))


def tiny_clip_batch(b=2, t=6, h=16, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.random((b, 3, t, h, w)).astype(np.float32))


def tiny_sensor_batch(b=2, t=10, seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.random((b, t, 4)).astype(np.float32))


class TestVideoEncoder:
    def test_output_is_512(self):
        enc = VideoEncoder(conv_channels=(4, 6))
        out = enc(tiny_clip_batch())
        assert out.shape == (2, VIDEO_DIM)

    def test_all_zero_clip_finite(self):
        enc = VideoEncoder(conv_channels=(4, 6))
        out = enc(torch.zeros(1, 3, 6, 16, 8))
        assert torch.isfinite(out).all()

    def test_identical_clips_identical_embeddings(self):
        enc = VideoEncoder(conv_channels=(4, 6)).eval()
        clip = tiny_clip_batch(1)
        with torch.no_grad():
            a, b = enc(clip), enc(clip)
        assert torch.equal(a, b)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ShapeError):
            VideoEncoder()(torch.zeros(2, 1, 6, 16, 8))

    def test_paper_sized_clip(self):
        enc = VideoEncoder()
        out = enc(torch.zeros(1, 3, 32, 128, 64))
        assert out.shape == (1, VIDEO_DIM)


class TestSensorEncoder:
    def test_output_is_128(self):
        enc = SensorEncoder()
        out = enc(tiny_sensor_batch())
        assert out.shape == (2, SENSOR_DIM)

    def test_masked_channel_invariance_exact(self):
        enc = SensorEncoder().eval()
        enc.set_mask(ModalityMask(video=True, heart_rate=False, breathing_rate=True,
                                  posture=True, movement=True))
        base = tiny_sensor_batch(seed=1)
        perturbed = base.clone()
        perturbed[:, :, 0] += 1000.0  # heart-rate column
        with torch.no_grad():
            assert torch.equal(enc(base), enc(perturbed))

    def test_zero_length_series_rejected(self):
        with pytest.raises(ValidationError):
            SensorEncoder()(torch.zeros(1, 0, 4))

    def test_wrong_channel_count_rejected(self):
        with pytest.raises(ShapeError):
            SensorEncoder()(torch.zeros(1, 5, 3))


class TestFusionHead:
    def test_six_logits_softmax_normalized(self):
        head = FusionHead().eval()
        with torch.no_grad():
            logits = head(torch.randn(3, FUSED_DIM))
        assert logits.shape == (3, 6)
        for row in logits.numpy():
            assert prediction_from_logits(row).probabilities.sum() == pytest.approx(1.0, abs=1e-6)

    def test_zero_dropout_train_equals_eval(self):
        head = FusionHead(dropout=0.0)
        x = torch.randn(2, FUSED_DIM)
        head.train()
        with torch.no_grad():
            train_out = head(x)
        head.eval()
        with torch.no_grad():
            eval_out = head(x)
        assert torch.equal(train_out, eval_out)

    def test_eval_mode_repeatable(self):
        head = FusionHead(dropout=0.5).eval()
        x = torch.randn(2, FUSED_DIM)
        with torch.no_grad():
            assert torch.equal(head(x), head(x))

    def test_wrong_width_rejected(self):
        with pytest.raises(ShapeError):
            FusionHead()(torch.randn(2, 100))


class TestMaskedModelInvariance:
    def test_video_masked_pixels_ignored(self):
        model = FusionModel(mask=ModalityMask.from_name("hr+br+posture+move"),
                            conv_channels=(4, 6)).eval()
        sensors = tiny_sensor_batch(seed=2)
        with torch.no_grad():
            a = model(tiny_clip_batch(seed=3), sensors)
            b = model(tiny_clip_batch(seed=4) * 2.0, sensors)
        assert torch.equal(a, b)

    def test_sensor_channels_masked_ignored(self):
        model = FusionModel(mask=ModalityMask.from_name("video+hr"),
                            conv_channels=(4, 6)).eval()
        clips = tiny_clip_batch(seed=5)
        base = tiny_sensor_batch(seed=6)
        perturbed = base.clone()
        perturbed[:, :, 1:] = -999.0  # everything except heart rate
        with torch.no_grad():
            assert torch.equal(model(clips, base), model(clips, perturbed))


class TestHeadGradientCheck:
    def test_head_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        head = FusionHead(hidden=8, dropout=0.0).double()
        x = torch.randn(2, FUSED_DIM, dtype=torch.float64)
        targets = torch.tensor([2, 5])

        def loss_fn():
            return torch.nn.functional.cross_entropy(head(x), targets)

        loss = loss_fn()
        loss.backward()
        step = 1e-5
        rng = np.random.default_rng(2)
        for name, param in head.named_parameters():
            analytic = param.grad.detach().reshape(-1)
            flat = param.data.reshape(-1)
            coords = rng.choice(flat.numel(), size=min(50, flat.numel()), replace=False)
            numeric = torch.zeros(len(coords), dtype=torch.float64)
            for k, i in enumerate(coords):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * step)
            picked = analytic[coords]
            denom = max(picked.norm().item(), numeric.norm().item(), 1e-12)
            assert (picked - numeric).norm().item() / denom <= 1e-4, name
