from .network import (
    MAP_KINDS,
    BoundaryAwareDetector,
    BoundaryModule,
    FrameClassifier,
    FusionModule,
    FusionWeights,
    ModelConfig,
    ModelOutputs,
    SequenceEncoder,
    weighted_fuse,
)
from .checkpoint import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
