"""Named configurations.

``full``: 128x128 frames, conv2d filters 20/30/40/50/32, conv3d 50, dense 200.
``desk``: a reduced spatial profile (32x32 frames, 8 filters per layer) that
trains on one CPU core in minutes; same layer graph as ``full``. Its narrow
ReLU convolutions use He-uniform initialization and a 0.03 learning rate;
with Glorot weights the loss often stalls at chance for the whole run.
"""

from .data.dataset import Preprocessing
from .data.synth import SynthConfig
from .flow import FlowParams
from .nn.model import ModelConfig
from .training import TrainConfig

PROFILES = ("full", "desk")


def model_config(profile: str) -> ModelConfig:
    if profile == "full":
        return ModelConfig.full()
    if profile == "desk":
        return ModelConfig(conv2d_filters=(8, 8, 8, 8, 8), conv3d_filters=8, gru_hidden=16, dense_units=32,
                           frames=20, height=32, width=32, init="he")
    raise ValueError(f"unknown profile {profile!r}")


def preprocessing(profile: str) -> Preprocessing:
    if profile == "full":
        return Preprocessing()
    if profile == "desk":
        return Preprocessing(size=32, max_mag=1.5,
                             flow=FlowParams(pyramid_levels=2, expansion_window=7, window_sigma=1.2,
                                             averaging_window=9))
    raise ValueError(f"unknown profile {profile!r}")


def train_config(profile: str, **overrides) -> TrainConfig:
    base = dict(epochs=30, batch_size=8, lr=0.01)
    if profile == "desk":
        base["lr"] = 0.03
    base.update(overrides)
    return TrainConfig(**base)


def synth_config(profile: str, n_videos: int = 250) -> SynthConfig:
    """Generator settings; ``desk`` renders at 64 px so that downsampling to
    32 px leaves 0.5-1.5 px/frame of motion."""
    if profile == "desk":
        return SynthConfig(n_videos=n_videos, size=64)
    return SynthConfig(n_videos=n_videos)
