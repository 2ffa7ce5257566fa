from .arch import GeneratorArch, MaskDiscArch, PatchDiscArch
from .checkpoint import (Checkpoint, CheckpointCorruptError, CheckpointError,
                         CheckpointVersionError, checkpoints_equal,
                         load_checkpoint, save_checkpoint)
from .nets import (FORWARD_COUNTS, GeneratorParams, MaskDiscParams,
                   PatchDiscParams, generator_forward, init_params,
                   mask_disc_forward, params_fingerprint, patch_disc_forward,
                   reset_forward_counts)

__all__ = [
    "GeneratorArch", "PatchDiscArch", "MaskDiscArch",
    "GeneratorParams", "PatchDiscParams", "MaskDiscParams",
    "init_params", "generator_forward", "patch_disc_forward",
    "mask_disc_forward", "params_fingerprint",
    "FORWARD_COUNTS", "reset_forward_counts",
    "Checkpoint", "save_checkpoint", "load_checkpoint", "checkpoints_equal",
    "CheckpointError", "CheckpointCorruptError", "CheckpointVersionError",
]
