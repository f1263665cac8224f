"""Selective state-space blocks: discretization, scan kernels, and the
full gated block used by every encoder/decoder layer."""

from .block import MambaBlockParams, causal_conv1d, init_block, mamba_block_forward
from .scan import (
    ParameterizationError,
    SsmCoeffs,
    StabilityError,
    discretize,
    scan_chunked,
    scan_sequential,
)

__all__ = ["SsmCoeffs", "discretize", "scan_sequential", "scan_chunked",
           "ParameterizationError", "StabilityError", "MambaBlockParams",
           "init_block", "mamba_block_forward", "causal_conv1d"]
