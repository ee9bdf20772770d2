"""Dataset ingestion, preprocessing and synthetic motion data."""

from .dataset import (DatasetError, DatasetManifest, Preprocessing, VideoSample, build_input, load_frames,
                      make_sample, open_dataset, prepare_dataset, resize_bilinear, sample_frames, scan_dataset,
                      zero_flow_input)
from .synth import SynthConfig, synth_generate
