import pytest
import torch

from rare.config import AppConfig
from rare.detection.types import BoundingBox
from rare.model.object_encoder import CBAM, ObjectEncoder, embed_object, normalize_box
from rare.model.prepare import roi_channels, roi_scales
from rare.model.roi_align import RoIPatch
from rare.utils.errors import InvalidInputError, InvalidShapeError


def _zero_biases(module: torch.nn.Module) -> None:
    for name, param in module.named_parameters():
        if name.endswith("bias"):
            torch.nn.init.zeros_(param)


def test_cbam_preserves_shape():
    torch.manual_seed(0)
    cbam = CBAM(channels=12, reduction=4)
    x = torch.rand((3, 12, 7, 7))
    assert cbam(x).shape == (3, 12, 7, 7)
    assert cbam(x[0]).shape == (12, 7, 7)


def test_cbam_of_zero_input_is_zero():
    torch.manual_seed(1)
    cbam = CBAM(channels=8, reduction=2)
    _zero_biases(cbam)
    out = cbam(torch.zeros((2, 8, 7, 7)))
    assert torch.equal(out, torch.zeros_like(out))


def test_cbam_gates_only_scale_inputs():
    torch.manual_seed(2)
    cbam = CBAM(channels=4, reduction=2)
    x = torch.rand((1, 4, 5, 5))
    out = cbam(x)
    assert bool((out.abs() <= x.abs() + 1e-7).all())


@pytest.mark.parametrize("seed", range(20))
def test_cbam_gradcheck(seed):
    torch.manual_seed(seed)
    cbam = CBAM(channels=4, reduction=2, kernel_size=3).double()
    x = torch.rand((1, 4, 3, 3), dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(cbam, (x,), eps=1e-6, atol=1e-4)


def test_cbam_channel_mismatch():
    with pytest.raises(InvalidShapeError):
        CBAM(channels=8)(torch.rand((1, 6, 7, 7)))


def _encoder(dtype=torch.float32, seed=4):
    torch.manual_seed(seed)
    return ObjectEncoder(in_channels=6, source_scales=(32, 8), box_embed_dim=4, object_embed_dim=16, cbam_reduction=2).to(dtype)


def _patches(dtype=torch.float32, seed=5):
    torch.manual_seed(seed)
    return [
        RoIPatch(torch.rand((2, 7, 7), dtype=dtype), (32,)),
        RoIPatch(torch.rand((4, 7, 7), dtype=dtype), (8,)),
    ]


def test_embed_object_output_dim():
    emb = embed_object(_patches(), BoundingBox(10, 20, 50, 60), (100.0, 100.0), _encoder())
    assert emb.values.shape == (16,)
    assert emb.box_norm == pytest.approx((0.1, 0.2, 0.5, 0.6))


def test_default_config_embeds_to_256():
    app = AppConfig.defaults()
    encoder = ObjectEncoder(
        roi_channels(app.detector, app.model),
        roi_scales(app.detector, app.model),
        app.model.box_embed_dim,
        app.model.object_embed_dim,
        app.model.cbam_reduction,
    )
    patches = torch.rand((2, encoder.in_channels, 7, 7))
    assert encoder(patches, torch.rand((2, 4))).shape == (2, 256)


def test_full_frame_box_normalizes_to_unit_square():
    assert normalize_box(BoundingBox(0, 0, 640, 360), (640, 360)) == (0.0, 0.0, 1.0, 1.0)
    # out-of-frame coordinates are clamped
    assert normalize_box(BoundingBox(-10, 5, 700, 180), (640, 360)) == (0.0, pytest.approx(5 / 360), 1.0, 0.5)


@pytest.mark.parametrize("seed", range(20))
def test_embed_object_gradcheck(seed):
    encoder = _encoder(torch.float64, seed)
    base = _patches(torch.float64, seed + 100)
    values = [p.values.clone().requires_grad_(True) for p in base]

    def run(a, b):
        patches = [RoIPatch(a, (32,)), RoIPatch(b, (8,))]
        return embed_object(patches, BoundingBox(10, 20, 50, 60), (100.0, 100.0), encoder).values

    assert torch.autograd.gradcheck(run, tuple(values), eps=1e-6, atol=1e-4)


def test_embed_object_scale_mismatch():
    patches = list(reversed(_patches()))
    with pytest.raises(InvalidInputError):
        embed_object(patches, BoundingBox(10, 20, 50, 60), (100.0, 100.0), _encoder())


def test_encoder_channel_mismatch():
    encoder = _encoder()
    with pytest.raises(InvalidShapeError):
        encoder(torch.rand((1, 5, 7, 7)), torch.rand((1, 4)))
    with pytest.raises(InvalidShapeError):
        encoder(torch.rand((2, 6, 7, 7)), torch.rand((1, 4)))


@pytest.mark.parametrize("seed", range(3))
def test_cbam_parameter_gradcheck(seed, parameter_gradcheck):
    torch.manual_seed(seed)
    cbam = CBAM(channels=4, reduction=2, kernel_size=3)
    x = torch.rand((2, 4, 3, 3), dtype=torch.float64)
    assert parameter_gradcheck(cbam, (x,))


class _EmbedOne(torch.nn.Module):
    def __init__(self, encoder: ObjectEncoder, patches):
        super().__init__()
        self.encoder = encoder
        self.patches = patches

    def forward(self, box: BoundingBox) -> torch.Tensor:
        return embed_object(self.patches, box, (100.0, 100.0), self.encoder).values


@pytest.mark.parametrize("seed", range(3))
def test_embed_object_parameter_gradcheck(seed, parameter_gradcheck):
    wrapped = _EmbedOne(_encoder(torch.float64, seed), _patches(torch.float64, seed + 100))
    names = {name for name, _ in wrapped.named_parameters()}
    assert {"encoder.box_embed.weight", "encoder.head.0.weight", "encoder.cbam.spatial.mix.weight"} <= names
    assert parameter_gradcheck(wrapped, (BoundingBox(10, 20, 50, 60),))
