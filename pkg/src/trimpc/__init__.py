"""Three-party semi-honest MPC: generalized beaver triples for bilinear
maps, masked-sine sigmoid, ODE-integrator softmax, and exact communication
accounting."""

from .bilinear import BilinearSpec, ConvShape, backward_specs, conv_fwd_spec, matmul_spec
from .proto_bm import (
    BmCall,
    MaskHandle,
    baseline_closed_form,
    bm_multiply,
    bm_multiply_batch,
    comm_closed_form,
    im2col_baseline_multiply,
)
from .randomness import PrfKey, PrfSource, PrfStream, stream_label
from .ring import FixedTensor, RingParams, decode, encode, truncate_local_share, zeros
from .session import LocalSimHarness, Session, run_local_sim, run_socket_party
from .sharing import AdditiveShare, open_share, reconstruct, share
from .transport import CommStats, PartyId, Phase, SessionConfig

__all__ = [
    "AdditiveShare",
    "BilinearSpec",
    "BmCall",
    "CommStats",
    "ConvShape",
    "FixedTensor",
    "LocalSimHarness",
    "MaskHandle",
    "PartyId",
    "Phase",
    "PrfKey",
    "PrfSource",
    "PrfStream",
    "RingParams",
    "Session",
    "SessionConfig",
    "backward_specs",
    "baseline_closed_form",
    "bm_multiply",
    "bm_multiply_batch",
    "comm_closed_form",
    "conv_fwd_spec",
    "decode",
    "encode",
    "im2col_baseline_multiply",
    "matmul_spec",
    "open_share",
    "reconstruct",
    "run_local_sim",
    "run_socket_party",
    "share",
    "stream_label",
    "truncate_local_share",
    "zeros",
]

__version__ = "0.1.0"
