"""Linear-attention deep nonlocal means filtering for multiplicative speckle."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BadMagicError,
    ContractError,
    DegenerateError,
    FormatError,
    IntegrityError,
    LdnlmError,
    NumericError,
    ParameterError,
    ShapeError,
    TrainingDiverged,
    TruncatedError,
    VersionError,
)
from .model import ModelConfig, denoise_image, forward_window, init_params  # noqa: E402
from .nlm import NlmConfig, nlm_denoise  # noqa: E402
from .speckle import NoiseSpec, sample_gamma, synthesize_speckled  # noqa: E402

__all__ = [
    "BadMagicError", "ContractError", "DegenerateError", "FormatError", "IntegrityError", "LdnlmError",
    "NumericError", "ParameterError", "ShapeError", "TrainingDiverged", "TruncatedError", "VersionError",
    "ModelConfig", "denoise_image", "forward_window", "init_params",
    "NlmConfig", "nlm_denoise",
    "NoiseSpec", "sample_gamma", "synthesize_speckled",
]
