import pytest
import torch

from rare.detection.types import FeatureMap
from rare.model.scene_encoder import SceneEncoder, SceneState, pool_backbone, scene_step
from rare.utils.errors import InvalidShapeError


def test_pool_backbone_is_spatial_mean():
    fmap = FeatureMap(torch.tensor([[[1.0, 2.0], [3.0, 4.0]]]), stride=32)
    assert pool_backbone(fmap).tolist() == [2.5]


def test_initial_state():
    encoder = SceneEncoder(input_size=8, hidden_size=6)
    state = encoder.initial_state()
    assert state.frame_index == 0
    assert torch.equal(state.hidden, torch.zeros(6))
    assert torch.equal(SceneState.initial(6).hidden, state.hidden)


def test_zero_parameters_halve_hidden_state():
    encoder = SceneEncoder(input_size=3, hidden_size=4)
    for param in encoder.parameters():
        torch.nn.init.zeros_(param)
    state = SceneState(hidden=torch.tensor([0.2, -0.4, 0.6, 1.0]), frame_index=3)
    nxt = scene_step(state, torch.rand(3), encoder)
    # z = 0.5, n = 0
    assert torch.allclose(nxt.hidden, 0.5 * state.hidden)
    assert nxt.frame_index == 4


def test_hidden_stays_in_open_unit_interval():
    torch.manual_seed(0)
    encoder = SceneEncoder(input_size=5, hidden_size=8)
    state = encoder.initial_state()
    for _ in range(50):
        state = scene_step(state, torch.randn(5) * 2.0, encoder)
        assert bool((state.hidden.abs() < 1.0).all())


def test_sequence_forward_matches_steps():
    torch.manual_seed(1)
    encoder = SceneEncoder(input_size=5, hidden_size=8)
    pooled = torch.rand((6, 5))
    batched = encoder(pooled)
    state = encoder.initial_state()
    for t in range(6):
        state = scene_step(state, pooled[t], encoder)
        assert torch.allclose(batched[t], state.hidden, atol=1e-6)
    assert encoder(torch.zeros((0, 5))).shape == (0, 8)


def test_step_is_deterministic():
    torch.manual_seed(2)
    encoder = SceneEncoder(input_size=4, hidden_size=4)
    state = SceneState(hidden=torch.rand(4))
    x = torch.rand(4)
    assert torch.equal(scene_step(state, x, encoder).hidden, scene_step(state, x, encoder).hidden)


@pytest.mark.parametrize("seed", range(20))
def test_scene_step_gradcheck(seed):
    torch.manual_seed(seed)
    encoder = SceneEncoder(input_size=3, hidden_size=4).double()
    h = torch.rand(4, dtype=torch.float64, requires_grad=True)
    x = torch.rand(3, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: scene_step(SceneState(a), b, encoder).hidden, (h, x))


def test_dimension_mismatch():
    encoder = SceneEncoder(input_size=4, hidden_size=4)
    with pytest.raises(InvalidShapeError):
        scene_step(encoder.initial_state(), torch.rand(5), encoder)
    with pytest.raises(InvalidShapeError):
        scene_step(SceneState(hidden=torch.zeros(3)), torch.rand(4), encoder)


@pytest.mark.parametrize("seed", range(3))
def test_gru_parameter_gradcheck(seed, parameter_gradcheck):
    torch.manual_seed(seed)
    encoder = SceneEncoder(input_size=3, hidden_size=4)
    pooled = torch.rand((3, 3), dtype=torch.float64)
    assert parameter_gradcheck(encoder, (pooled,))
