"""Three-party FedVGCN protocol: messages, transports, parties, sessions."""

from .counters import CostCounters
from .messages import (
    ACTIVE,
    PASSIVE,
    SERVER,
    EncPartialLoss,
    EncShare,
    EncUpstreamGrad,
    MaskedEncGrad,
    MaskedPlainGrad,
    NeighborCount,
    PlainSum,
    PubKeyDist,
    WireError,
    decode_message,
    encode_message,
)
from .parties import (
    ActiveParty,
    PartyParams,
    PassiveParty,
    ProtocolError,
    ServerParty,
    epoch_dropout_masks,
    partial_loss_plain,
)
from .session import (
    FederatedConfig,
    FederatedSession,
    loss_decompose_encrypted,
    session_setup,
)
from .transport import InProcessTransport, SocketPairTransport, TransportError

__all__ = [
    "ACTIVE",
    "PASSIVE",
    "SERVER",
    "ActiveParty",
    "CostCounters",
    "EncPartialLoss",
    "EncShare",
    "EncUpstreamGrad",
    "FederatedConfig",
    "FederatedSession",
    "InProcessTransport",
    "MaskedEncGrad",
    "MaskedPlainGrad",
    "NeighborCount",
    "PartyParams",
    "PassiveParty",
    "PlainSum",
    "ProtocolError",
    "PubKeyDist",
    "ServerParty",
    "SocketPairTransport",
    "TransportError",
    "WireError",
    "decode_message",
    "encode_message",
    "epoch_dropout_masks",
    "loss_decompose_encrypted",
    "partial_loss_plain",
    "session_setup",
]
