import pytest
import torch

from triagekit.fusion import (
    FusionModel,
    complexity_report,
    count_parameters,
    linear_layer_parameters,
)


def lstm_parameter_oracle(input_size, hidden_size):
    # torch LSTM: W_ih (4h x d), W_hh (4h x h), b_ih (4h), b_hh (4h)
    return 4 * hidden_size * (input_size + hidden_size) + 8 * hidden_size


def conv3d_parameter_oracle(in_ch, out_ch, k=3):
    return out_ch * in_ch * k**3 + out_ch


def default_model_parameter_oracle():
    total = conv3d_parameter_oracle(3, 16) + conv3d_parameter_oracle(16, 32)
    total += linear_layer_parameters(32, 512)          # video projection
    total += lstm_parameter_oracle(4, 128)             # sensor encoder
    total += linear_layer_parameters(640, 256)         # fusion hidden
    total += linear_layer_parameters(256, 6)           # logits
    return total


class TestComplexityReport:
    def test_single_linear_layer_closed_form(self):
        layer = torch.nn.Linear(17, 5)
        assert count_parameters(layer) == linear_layer_parameters(17, 5) == 17 * 5 + 5

    def test_default_model_matches_independent_count(self):
        model = FusionModel()
        report = complexity_report(model, clip_shape=(32, 128, 64), sensor_timesteps=32)
        assert report.parameters == default_model_parameter_oracle()

    def test_default_model_under_17m(self):
        model = FusionModel()
        report = complexity_report(model, clip_shape=(32, 128, 64), sensor_timesteps=32)
        assert report.parameters <= 17_000_000
        assert report.macs_per_clip > 0

    def test_report_deterministic(self):
        model = FusionModel()
        a = complexity_report(model, (32, 128, 64), 32)
        b = complexity_report(model, (32, 128, 64), 32)
        assert a == b

    def test_pretty_output_mentions_totals(self):
        model = FusionModel(conv_channels=(4, 6))
        report = complexity_report(model, (8, 32, 16), 8)
        text = report.pretty()
        assert "total parameters" in text
        assert f"{report.parameters:,}" in text

    def test_macs_scale_with_clip_volume(self):
        model = FusionModel()
        small = complexity_report(model, (8, 32, 16), 8)
        large = complexity_report(model, (16, 64, 32), 8)
        assert large.macs_per_clip > small.macs_per_clip
        assert large.parameters == small.parameters
