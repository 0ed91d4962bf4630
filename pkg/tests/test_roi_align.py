import numpy as np
import pytest
import torch

from rare.detection.types import BoundingBox, DetectionOutput, FeatureMap
from rare.model.roi_align import pool_multiscale, roi_align, roi_align_boxes, roi_patches, selected_maps
from rare.utils.errors import DegenerateBoxError, InvalidInputError


def _bilinear(values: np.ndarray, y: float, x: float) -> np.ndarray:
    """Reads one sample the way the reference CUDA kernel does, written out per case."""
    _, height, width = values.shape
    if y < -1.0 or y > height or x < -1.0 or x > width:
        return np.zeros(values.shape[0])
    y, x = max(y, 0.0), max(x, 0.0)
    y_low, x_low = int(y), int(x)
    if y_low >= height - 1:
        y_low = y_high = height - 1
        y = float(y_low)
    else:
        y_high = y_low + 1
    if x_low >= width - 1:
        x_low = x_high = width - 1
        x = float(x_low)
    else:
        x_high = x_low + 1
    ly, lx = y - y_low, x - x_low
    hy, hx = 1.0 - ly, 1.0 - lx
    return (
        hy * hx * values[:, y_low, x_low]
        + hy * lx * values[:, y_low, x_high]
        + ly * hx * values[:, y_high, x_low]
        + ly * lx * values[:, y_high, x_high]
    )


def brute_force_roi_align(values, box, stride, out_size, sampling_ratio):
    x1, y1, x2, y2 = (c / stride for c in box)
    bin_h, bin_w = (y2 - y1) / out_size, (x2 - x1) / out_size
    out = np.zeros((values.shape[0], out_size, out_size))
    for p in range(out_size):
        for q in range(out_size):
            acc = np.zeros(values.shape[0])
            for iy in range(sampling_ratio):
                y = y1 + p * bin_h + (iy + 0.5) * bin_h / sampling_ratio
                for ix in range(sampling_ratio):
                    x = x1 + q * bin_w + (ix + 0.5) * bin_w / sampling_ratio
                    acc += _bilinear(values, y, x)
            out[:, p, q] = acc / (sampling_ratio * sampling_ratio)
    return out


def test_matches_brute_force_oracle_on_random_cases():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        channels = int(rng.integers(1, 4))
        height, width = (int(v) for v in rng.integers(1, 17, size=2))
        stride = int(rng.choice([1, 2, 4, 8]))
        out_size = int(rng.integers(1, 8))
        sampling_ratio = int(rng.integers(1, 4))
        values = rng.normal(size=(channels, height, width))
        # boxes may reach slightly outside the map to exercise the zero-padding rule
        xs = np.sort(rng.uniform(-1.5, width + 1.5, size=2)) * stride
        ys = np.sort(rng.uniform(-1.5, height + 1.5, size=2)) * stride
        if xs[1] - xs[0] < 1e-3 or ys[1] - ys[0] < 1e-3:
            continue
        box = BoundingBox(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))
        fmap = FeatureMap(torch.tensor(values, dtype=torch.float64), stride)

        got = roi_align(fmap, box, out_size, sampling_ratio).numpy()
        expected = brute_force_roi_align(values, box.as_tuple(), stride, out_size, sampling_ratio)
        np.testing.assert_allclose(got, expected, atol=1e-5, rtol=0)


def test_constant_map_gives_constant_output():
    fmap = FeatureMap(torch.full((2, 6, 6), 3.5, dtype=torch.float64), stride=4)
    out = roi_align(fmap, BoundingBox(1.0, 2.0, 19.0, 17.0), out_size=5, sampling_ratio=3)
    assert out.shape == (2, 5, 5)
    assert torch.allclose(out, torch.full_like(out, 3.5))


def test_ramp_map_single_bin():
    values = torch.arange(16, dtype=torch.float64).reshape(1, 4, 4)  # 4y + x
    out = roi_align(FeatureMap(values, stride=1), BoundingBox(0.0, 0.0, 4.0, 4.0), out_size=1, sampling_ratio=2)
    expected = brute_force_roi_align(values.numpy(), (0.0, 0.0, 4.0, 4.0), 1, 1, 2)
    assert out.shape == (1, 1, 1)
    assert float(out) == pytest.approx(float(expected[0, 0, 0]), abs=1e-12)
    # samples at 1 and 3 per axis; 3 sits on the last row/column
    assert float(out) == pytest.approx((5 + 7 + 13 + 15) / 4)


def test_adding_constant_shifts_output_for_inner_boxes():
    rng = np.random.default_rng(5)
    values = torch.tensor(rng.normal(size=(3, 10, 10)))
    box = BoundingBox(4.0, 6.0, 28.0, 30.0)
    base = roi_align(FeatureMap(values, 4), box, 7, 2)
    shifted = roi_align(FeatureMap(values + 2.0, 4), box, 7, 2)
    assert torch.allclose(shifted, base + 2.0, atol=1e-12)


def test_degenerate_box():
    fmap = FeatureMap(torch.ones((1, 8, 8)), stride=1)
    with pytest.raises(DegenerateBoxError):
        roi_align_boxes(fmap.values, torch.tensor([[2.0, 2.0, 2.0, 5.0]]), 1, 7, 2)
    # a zero-width box cannot be built in the first place
    with pytest.raises(InvalidInputError):
        BoundingBox(2.0, 2.0, 2.0, 5.0)


def test_invalid_sizes():
    fmap = FeatureMap(torch.ones((1, 8, 8)), stride=1)
    with pytest.raises(InvalidInputError):
        roi_align(fmap, BoundingBox(0, 0, 4, 4), out_size=0)


def _output():
    backbone = FeatureMap(torch.rand((5, 4, 4)), 32)
    neck = tuple(FeatureMap(torch.rand((3, 128 // s, 128 // s)), s) for s in (8, 16, 32))
    return DetectionOutput(detections=(), backbone=backbone, neck=neck, input_size=(128, 128))


def test_multiscale_concatenates_channels_in_map_order():
    output = _output()
    boxes = [BoundingBox(10, 10, 70, 50), BoundingBox(0, 64, 128, 128)]
    pooled = pool_multiscale(selected_maps(output), boxes, 7, 2)
    assert pooled.shape == (2, 5 + 3 * 3, 7, 7)
    assert torch.allclose(pooled[0, :5], roi_align(output.backbone, boxes[0]))
    assert torch.allclose(pooled[1, 5:8], roi_align(output.neck[0], boxes[1]))

    patches = roi_patches(selected_maps(output, use_backbone=False), boxes)
    assert [p.source_scales for p in patches[0]] == [(8,), (16,), (32,)]
    assert patches[1][2].channels == 3


def test_selected_maps_ablation_switches():
    output = _output()
    assert [m.stride for m in selected_maps(output, use_backbone=True, use_neck=False)] == [32]
    assert len(selected_maps(output, use_backbone=False, use_neck=True)) == 3
    with pytest.raises(InvalidInputError):
        selected_maps(output, use_backbone=False, use_neck=False)
    assert pool_multiscale(selected_maps(output), [], 7, 2).shape == (0, 14, 7, 7)
