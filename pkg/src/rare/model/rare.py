import logging
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn

from rare.config import AppConfig, DetectorConfig, ModelConfig
from rare.model.fusion import SceneObjectAttention
from rare.model.head import AnticipationHead, FeatureQueue, RiskScore, push_and_classify
from rare.model.object_encoder import ObjectEncoder
from rare.model.prepare import PreparedFrame, PreparedVideo, roi_channels, roi_scales
from rare.model.scene_encoder import SceneEncoder, SceneState

logger = logging.getLogger("rare.model")


@dataclass(frozen=True)
class StreamState:
    scene: SceneState
    queue: FeatureQueue


@dataclass(frozen=True)
class StepOutput:
    risk: torch.Tensor  # differentiable probability, shape ()
    score: RiskScore
    attention: torch.Tensor  # (N,)
    fused: torch.Tensor


@dataclass(frozen=True)
class VideoOutput:
    risks: torch.Tensor  # (T,)
    attention: torch.Tensor  # (T, N_max), zero on padded slots
    mask: torch.Tensor  # (T, N_max)

    def frame_scores(self, t: int) -> torch.Tensor:
        return self.attention[t][self.mask[t]]


class RareModel(nn.Module):
    """
    Object encoder, scene GRU, scene-object attention and queue classifier.
    Works on prepared frames; the detector stays outside the module.
    """

    def __init__(self, detector: DetectorConfig, model: ModelConfig):
        super().__init__()
        self.model_config = model
        self.object_encoder = ObjectEncoder(
            in_channels=roi_channels(detector, model),
            source_scales=roi_scales(detector, model),
            box_embed_dim=model.box_embed_dim,
            object_embed_dim=model.object_embed_dim,
            cbam_reduction=model.cbam_reduction,
        )
        self.scene_encoder = SceneEncoder(detector.backbone_channels, model.scene_hidden_dim)
        self.attention = SceneObjectAttention(
            scene_dim=model.scene_hidden_dim,
            object_dim=model.object_embed_dim,
            fused_dim=model.fused_dim,
            num_heads=model.num_heads,
            residual=model.fusion_residual,
        )
        self.head = AnticipationHead(model.fused_dim, model.queue_size, model.classifier_hidden_dim)

    @classmethod
    def from_config(cls, cfg: AppConfig) -> "RareModel":
        return cls(cfg.detector, cfg.model)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # streaming

    def initial_state(self) -> StreamState:
        return StreamState(scene=self.scene_encoder.initial_state(), queue=self.head.new_queue())

    def step(self, state: StreamState, frame: PreparedFrame) -> Tuple[StreamState, StepOutput]:
        scene = self.scene_encoder.step(state.scene, frame.pooled)
        hidden = scene.hidden.unsqueeze(0)
        if len(frame):
            objects = self.object_encoder(frame.patches, frame.box_norm)
            fused, scores = self.attention(hidden, objects.unsqueeze(0))
            fused, scores = fused[0], scores[0]
        else:
            fused = self.attention.project_scene(scene.hidden)
            scores = fused.new_zeros((0,))
        queue, risk, record = push_and_classify(state.queue, fused, self.head, frame_index=scene.frame_index)
        return StreamState(scene=scene, queue=queue), StepOutput(risk=risk, score=record, attention=scores, fused=fused)

    # batched

    def forward_video(self, video: PreparedVideo) -> VideoOutput:
        hidden = self.scene_encoder(video.pooled)
        steps, width = video.mask.shape
        objects = hidden.new_zeros((steps, width, self.object_encoder.object_embed_dim))
        if bool(video.mask.any()):
            encoded = self.object_encoder(video.patches[video.mask], video.box_norm[video.mask])
            objects = objects.index_put(torch.nonzero(video.mask, as_tuple=True), encoded)
        fused, scores = self.attention(hidden, objects, video.mask)
        return VideoOutput(risks=self.head.classify_video(fused), attention=scores, mask=video.mask)

    def forward(self, video: PreparedVideo) -> VideoOutput:
        return self.forward_video(video)
