import sys
from pathlib import Path

import pytest


def pytest_configure():
    """
    Ensure the project's src/ directory is on sys.path so tests can import 'rare'.
    """
    project_root = Path(__file__).resolve().parents[1]
    src_path = project_root / "src"
    src_str = str(src_path)
    if src_path.exists() and src_str not in sys.path:
        sys.path.insert(0, src_str)


def small_overrides(tmp_path: Path, **extra) -> dict:
    """Desk-sized model and dataset so end-to-end tests run in seconds on a CPU."""
    overrides = {
        "Detector.input_size": "128",
        "Detector.backbone_channels": "8",
        "Detector.neck_channels": "4,4,4",
        "Detector.blur_px": "4",
        "Model.box_embed_dim": "8",
        "Model.object_embed_dim": "16",
        "Model.cbam_reduction": "4",
        "Model.scene_hidden_dim": "16",
        "Model.fused_dim": "16",
        "Model.num_heads": "4",
        "Model.queue_size": "4",
        "Model.classifier_hidden_dim": "8",
        "Training.epochs": "2",
        "Training.batch_size": "2",
        "Training.learning_rate": "0.01",
        "Synthetic.num_positive": "3",
        "Synthetic.num_negative": "3",
        "Synthetic.test_positive": "2",
        "Synthetic.test_negative": "2",
        "Synthetic.frames_per_video": "12",
        "Synthetic.frame_width": "96",
        "Synthetic.frame_height": "64",
        "Benchmark.warmup": "2",
        "Benchmark.measured": "8",
        "Data.root": str(tmp_path / "data"),
        "Output.output_dir": str(tmp_path / "runs"),
        "Output.progress": "false",
    }
    overrides.update({k: str(v) for k, v in extra.items()})
    return overrides


@pytest.fixture
def small_cfg(tmp_path):
    from rare.config import AppConfig

    return AppConfig.defaults(small_overrides(tmp_path))


@pytest.fixture
def parameter_gradcheck():
    """Returns check(module, args): gradcheck of module(*args) against every parameter, in float64."""
    import torch
    from torch.func import functional_call

    def check(module, args, **kwargs):
        module = module.double()
        names = [name for name, _ in module.named_parameters()]
        params = tuple(p.detach().clone().requires_grad_(True) for _, p in module.named_parameters())

        def run(*values):
            return functional_call(module, dict(zip(names, values)), args)

        kwargs.setdefault("eps", 1e-6)
        kwargs.setdefault("atol", 1e-4)
        return torch.autograd.gradcheck(run, params, **kwargs)

    return check
