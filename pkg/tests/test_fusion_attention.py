import pytest
import torch

from rare.model.fusion import SceneObjectAttention, fuse, fuse_empty
from rare.model.object_encoder import ObjectEmbedding
from rare.model.scene_encoder import SceneState
from rare.utils.errors import EmptyObjectSetError, InvalidShapeError


def _attention(dtype=torch.float32, seed=0, **kwargs):
    torch.manual_seed(seed)
    return SceneObjectAttention(scene_dim=8, object_dim=6, fused_dim=8, num_heads=2, **kwargs).to(dtype)


def _scene(dtype=torch.float32, seed=1):
    torch.manual_seed(seed)
    return SceneState(hidden=torch.rand(8, dtype=dtype) * 2 - 1, frame_index=1)


def test_single_object_gets_all_attention():
    out = fuse(_scene(), torch.rand((1, 6)), _attention())
    assert out.scores.tolist() == [pytest.approx(1.0)]
    assert out.fused.shape == (8,)


def test_identical_objects_share_attention_equally():
    obj = torch.rand(6)
    out = fuse(_scene(), torch.stack([obj, obj, obj]), _attention())
    assert torch.allclose(out.scores, torch.full((3,), 1 / 3))


def test_accepts_object_embeddings():
    values = torch.rand((2, 6))
    embeddings = [ObjectEmbedding(values[i], (0.0, 0.0, 1.0, 1.0)) for i in range(2)]
    attention = _attention()
    a = fuse(_scene(), embeddings, attention)
    b = fuse(_scene(), values, attention)
    assert torch.equal(a.fused, b.fused)


def test_scores_form_a_distribution_and_follow_permutations():
    attention = _attention(torch.float64)
    generator = torch.Generator().manual_seed(7)
    with torch.no_grad():
        for _ in range(1000):
            n = int(torch.randint(1, 21, (1,), generator=generator))
            scene = SceneState(hidden=torch.rand(8, generator=generator, dtype=torch.float64) * 2 - 1)
            objects = torch.randn((n, 6), generator=generator, dtype=torch.float64)
            out = fuse(scene, objects, attention)
            assert float(out.scores.sum()) == pytest.approx(1.0, abs=1e-6)
            assert bool((out.scores >= 0).all())

            perm = torch.randperm(n, generator=generator)
            permuted = fuse(scene, objects[perm], attention)
            assert torch.allclose(permuted.scores, out.scores[perm], atol=1e-6)
            assert torch.allclose(permuted.fused, out.fused, atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_fuse_gradcheck(seed):
    attention = _attention(torch.float64, seed)
    hidden = _scene(torch.float64, seed + 100).hidden.clone().requires_grad_(True)
    objects = torch.rand((3, 6), dtype=torch.float64, requires_grad=True)

    def run(h, o):
        out = fuse(SceneState(h), o, attention)
        return out.fused, out.scores

    assert torch.autograd.gradcheck(run, (hidden, objects))


def test_empty_frame():
    attention = _attention()
    out = fuse_empty(_scene(), attention)
    assert out.scores.shape == (0,)
    assert out.fused.shape == (8,)

    for name, param in attention.named_parameters():
        if name.endswith("bias"):
            torch.nn.init.zeros_(param)
    zero = fuse_empty(SceneState(hidden=torch.zeros(8)), attention)
    assert torch.equal(zero.fused, torch.zeros(8))


def test_fuse_without_objects_raises():
    with pytest.raises(EmptyObjectSetError):
        fuse(_scene(), torch.zeros((0, 6)), _attention())
    with pytest.raises(EmptyObjectSetError):
        fuse(_scene(), [], _attention())


def test_masked_batch_matches_unmasked_frames():
    attention = _attention()
    torch.manual_seed(3)
    hidden = torch.rand((3, 8))
    counts = [2, 0, 4]
    objects = torch.zeros((3, 4, 6))
    mask = torch.zeros((3, 4), dtype=torch.bool)
    for t, n in enumerate(counts):
        objects[t, :n] = torch.randn((n, 6))
        mask[t, :n] = True
    # padding must not leak into the result
    objects[0, 2:] = 100.0

    fused, scores = attention(hidden, objects, mask)
    for t, n in enumerate(counts):
        scene = SceneState(hidden=hidden[t])
        single = fuse(scene, objects[t, :n], attention) if n else fuse_empty(scene, attention)
        assert torch.allclose(fused[t], single.fused, atol=1e-6)
        assert torch.allclose(scores[t, :n], single.scores, atol=1e-6)
        assert bool((scores[t, n:] == 0).all())


def test_residual_switch_changes_output():
    torch.manual_seed(4)
    objects = torch.rand((2, 6))
    with_residual = fuse(_scene(), objects, _attention(residual=True))
    without = fuse(_scene(), objects, _attention(residual=False))
    assert torch.allclose(with_residual.scores, without.scores)
    q = _attention().project_scene(_scene().hidden)
    assert torch.allclose(with_residual.fused - without.fused, q, atol=1e-6)


def test_shape_validation():
    attention = _attention()
    with pytest.raises(InvalidShapeError):
        attention(torch.rand((1, 7)), torch.rand((1, 2, 6)))
    with pytest.raises(InvalidShapeError):
        attention(torch.rand((1, 8)), torch.rand((2, 2, 6)))
    with pytest.raises(InvalidShapeError):
        SceneObjectAttention(scene_dim=8, object_dim=6, fused_dim=10, num_heads=4)


def test_top_object_survives_reordering():
    attention = _attention(torch.float64, seed=5)
    generator = torch.Generator().manual_seed(11)
    with torch.no_grad():
        for _ in range(200):
            n = int(torch.randint(2, 13, (1,), generator=generator))
            scene = SceneState(hidden=torch.rand(8, generator=generator, dtype=torch.float64) * 2 - 1)
            objects = torch.randn((n, 6), generator=generator, dtype=torch.float64)
            out = fuse(scene, objects, attention)
            top = int(out.scores.argmax())
            if float(out.scores.topk(2).values.diff().abs()) < 1e-9:
                continue  # tie, argmax is order dependent

            perm = torch.randperm(n, generator=generator)
            permuted = fuse(scene, objects[perm], attention)
            assert int(perm[int(permuted.scores.argmax())]) == top


def test_masked_batch_follows_slot_permutations():
    attention = _attention(torch.float64, seed=6)
    generator = torch.Generator().manual_seed(13)
    steps, slots = 5, 7
    with torch.no_grad():
        for _ in range(50):
            hidden = torch.rand((steps, 8), generator=generator, dtype=torch.float64) * 2 - 1
            objects = torch.randn((steps, slots, 6), generator=generator, dtype=torch.float64)
            mask = torch.rand((steps, slots), generator=generator) < 0.6
            mask[0] = False  # one empty frame
            mask[1, 3] = True
            fused, scores = attention(hidden, objects, mask)

            perm = torch.randperm(slots, generator=generator)
            p_fused, p_scores = attention(hidden, objects[:, perm], mask[:, perm])
            assert torch.allclose(p_fused, fused, atol=1e-9)
            assert torch.allclose(p_scores, scores[:, perm], atol=1e-9)
            for t in range(steps):
                valid = int(mask[t].sum())
                if valid == 0:
                    continue
                masked_top = scores[t].masked_fill(~mask[t], -1.0)
                if valid > 1 and float(masked_top.topk(2).values.diff().abs()) < 1e-9:
                    continue
                top = int(masked_top.argmax())
                assert int(perm[int(p_scores[t].masked_fill(~mask[t, perm], -1.0).argmax())]) == top
