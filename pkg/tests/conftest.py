import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_visual(rng, t=4, clip_id="clip_a"):
    from crossfuse.feature_io import VISUAL_DIM, FeatureSequence, Modality

    data = rng.normal(size=(t, VISUAL_DIM)).astype(np.float32)
    return FeatureSequence(clip_id=clip_id, modality=Modality.VISUAL, data=data)


def make_skeleton(rng, t=4, clip_id="clip_a"):
    from crossfuse.feature_io import NUM_JOINTS, FeatureSequence, Modality

    data = rng.normal(size=(t, NUM_JOINTS, 3)).astype(np.float32)
    return FeatureSequence(clip_id=clip_id, modality=Modality.SKELETON, data=data)
