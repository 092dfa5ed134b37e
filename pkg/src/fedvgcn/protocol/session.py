"""Three-party training sessions: setup, round orchestration, reporting.

The driver owns each party's local clock: it tells parties when to start
an epoch and when to emit their next share, then pumps the transport until
the message cascade settles. All data flows through transport frames; the
driver never moves plaintext between parties itself.

Per iteration and layer, forward runs Algorithm-1 style (shares encrypted
to the server, homomorphic sum, decrypted pre-activation returned to both
parties) and backward runs Algorithm-2 style (share + partial loss to the
active party, total loss to the server, noise-masked gradients decrypted
blind, SGD applied locally). Between layers the active party rebuilds the
chain-rule factor from its own plaintext block and the passive party's
re-masked encrypted contribution.
"""

import hashlib
import random
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ..gnn import SageModel, engine_forward, glorot_init, make_party_blocks
from ..graph import VerticalView
from ..paillier import Ciphertext, PublicKey, encrypt, mul_scalar_signed, add_ct
from ..polyact import fit_scale_param
from .counters import CostCounters
from .messages import ACTIVE, PASSIVE, SERVER, decode_message
from .parties import (
    ActiveParty,
    PartyParams,
    PassiveParty,
    ProtocolError,
    ServerParty,
    partial_loss_plain,
)
from .transport import InProcessTransport

DEFAULT_KEY_BITS = 512
DEFAULT_FRAC_BITS = 32


@dataclass
class FederatedConfig:
    key_bits: int = DEFAULT_KEY_BITS
    frac_bits: int = DEFAULT_FRAC_BITS
    scalar_bits: int = 16
    seed: int = 0
    learning_rate: float = 1e-5
    dropout_rate: float = 0.5
    activation: object = "auto"  # scale value, QuadActivation, or "auto"
    hidden: int = 64
    test_mode: bool = True
    pool_size: int = 128

    def __post_init__(self):
        if self.key_bits >= 1024:
            pass
        elif not self.test_mode:
            raise ValueError("production sessions need at least 1024-bit keys")


def _derive_session_id(seed: int) -> bytes:
    return hashlib.sha256(f"fedvgcn-session-{seed}".encode()).digest()[:8]


def _party_rows(model: SageModel, n_feat_a: int):
    """Per-matrix row ownership, mirroring gnn.make_party_blocks: layer-0
    rows by feature ownership; above that the self matrix is all B's and
    the neighbor matrix gives the passive party the smaller slice."""
    from ..gnn import HIDDEN_NEIGH_SHARE

    in_dim = model.layers[0].in_dim
    empty = np.arange(0)
    rows = {
        "self_a": [np.arange(n_feat_a)],
        "self_b": [np.arange(n_feat_a, in_dim)],
        "neigh_a": [np.arange(n_feat_a)],
        "neigh_b": [np.arange(n_feat_a, in_dim)],
    }
    for layer in model.layers[1:]:
        cut = max(1, layer.in_dim // HIDDEN_NEIGH_SHARE)
        rows["self_a"].append(empty)
        rows["self_b"].append(np.arange(layer.in_dim))
        rows["neigh_a"].append(np.arange(cut))
        rows["neigh_b"].append(np.arange(cut, layer.in_dim))
    return rows


class FederatedSession:
    """One training session over two vertical views and a key server."""

    def __init__(
        self,
        view_a: VerticalView,
        view_b: VerticalView,
        config: FederatedConfig,
        model: Optional[SageModel] = None,
        transport=None,
    ):
        if view_a.node_ids != view_b.node_ids:
            raise ProtocolError("views are not aligned on the same node ordering")
        if view_b.labels is None:
            raise ProtocolError("active party view must carry labels")
        self.config = config
        self.view_a, self.view_b = view_a, view_b
        self.n_nodes = len(view_a.node_ids)
        n_feat_a = view_a.features.shape[1]
        in_dim = n_feat_a + view_b.features.shape[1]
        num_classes = view_b.num_classes

        if model is None:
            act = self._resolve_activation(in_dim, num_classes)
            model = glorot_init(
                in_dim,
                num_classes,
                act,
                config.seed,
                hidden=config.hidden,
                dropout_rate=config.dropout_rate,
                learning_rate=config.learning_rate,
            )
        self.model_init = model.copy()
        self.layer_dims = tuple((l.in_dim, l.out_dim) for l in model.layers)
        self.rows = _party_rows(model, n_feat_a)

        session_id = _derive_session_id(config.seed)
        self.session_id = session_id
        base = random.Random(config.seed).getrandbits(62)
        common = dict(
            session_id=session_id,
            n_nodes=self.n_nodes,
            layer_dims=self.layer_dims,
            act_a=model.activation.a,
            dropout_rate=model.dropout_rate,
            mask_seed=config.seed * 7 + 1,
            learning_rate=model.learning_rate,
            frac_bits=config.frac_bits,
            scalar_bits=config.scalar_bits,
            test_mode=config.test_mode,
            pool_size=config.pool_size,
        )
        params_a = PartyParams(
            rows_self=tuple(self.rows["self_a"]),
            rows_neigh=tuple(self.rows["neigh_a"]),
            noise_seed=base ^ 0xA1,
            obf_seed=(base + 11) & 0x7FFFFFFF,
            **common,
        )
        params_b = PartyParams(
            rows_self=tuple(self.rows["self_b"]),
            rows_neigh=tuple(self.rows["neigh_b"]),
            noise_seed=base ^ 0xB2,
            obf_seed=(base + 23) & 0x7FFFFFFF,
            **common,
        )
        params_c = PartyParams(
            rows_self=tuple(self.rows["self_a"]),
            rows_neigh=tuple(self.rows["neigh_a"]),
            noise_seed=base ^ 0xC3,
            obf_seed=(base + 37) & 0x7FFFFFFF,
            **common,
        )

        self.counters = CostCounters()
        self.transport = transport if transport is not None else InProcessTransport()
        for role in (PASSIVE, ACTIVE, SERVER):
            self.transport.register(role)

        self.party_a = PassiveParty(
            params_a,
            self.transport,
            self.counters,
            view_a.features,
            view_a.edges,
            w_self=[l.w_self[r] for l, r in zip(model.layers, self.rows["self_a"])],
            w_neigh=[l.w_neigh[r] for l, r in zip(model.layers, self.rows["neigh_a"])],
        )
        self.party_b = ActiveParty(
            params_b,
            self.transport,
            self.counters,
            view_b.features,
            view_b.edges,
            w_self=[l.w_self[r] for l, r in zip(model.layers, self.rows["self_b"])],
            w_neigh=[l.w_neigh[r] for l, r in zip(model.layers, self.rows["neigh_b"])],
            labels=view_b.labels,
            num_classes=num_classes,
        )
        self.server = ServerParty(
            params_c, self.transport, self.counters, config.key_bits, key_seed=config.seed * 31 + 5
        )
        self._parties = {PASSIVE: self.party_a, ACTIVE: self.party_b, SERVER: self.server}
        self._epoch = 0
        self.loss_history: List[float] = []

    # -- plumbing ------------------------------------------------------------

    def _resolve_activation(self, in_dim: int, num_classes: int):
        cfg = self.config
        if cfg.activation != "auto":
            from ..polyact import QuadActivation

            if isinstance(cfg.activation, QuadActivation):
                return cfg.activation
            return QuadActivation(float(cfg.activation))
        # plaintext warm-up: first-layer pre-activations of the fresh model
        # under the split (block-aggregated) forward
        from ..polyact import QuadActivation

        probe = glorot_init(
            in_dim, num_classes, QuadActivation(1.0), cfg.seed, hidden=cfg.hidden
        )
        x_full = np.hstack([self.view_a.features, self.view_b.features])
        blocks = make_party_blocks(
            probe, self.view_a.features.shape[1], self.view_a.edges, self.view_b.edges,
            self.n_nodes,
        )
        z1 = engine_forward(probe, x_full, blocks).preacts[0]
        return fit_scale_param(z1.ravel())

    def _pump(self) -> None:
        """Deliver queued frames round-robin until every queue drains."""
        progress = True
        while progress:
            progress = False
            for role, party in self._parties.items():
                frame = self.transport.poll(role)
                if frame is None:
                    continue
                msg = decode_message(frame, pk=party.pk)
                party.handle(msg)
                progress = True

    # -- session lifecycle ------------------------------------------------------

    def setup(self) -> None:
        """Key distribution plus the one-time neighbor-count exchange."""
        self.server.distribute_key()
        self._pump()
        self.party_a.send_neighbor_counts(ACTIVE)
        self.party_b.send_neighbor_counts(PASSIVE)
        self._pump()

    def forward_round(self, layer: int) -> None:
        """One layer's pre-activation assembly: both parties encrypt their
        shares to the server, which sums, decrypts and returns z."""
        self.party_a.forward_share(layer)
        self.party_b.forward_share(layer)
        self._pump()
        if self.party_a.z[layer] is None or self.party_b.z[layer] is None:
            raise ProtocolError(f"forward assembly stalled at layer {layer}")

    def forward_pass(self, training: bool) -> None:
        self.party_a.begin_epoch(self._epoch, training)
        self.party_b.begin_epoch(self._epoch, training)
        for layer in range(len(self.layer_dims)):
            self.forward_round(layer)

    def backward_round(self, layer: int) -> None:
        """One layer's Algorithm-2 exchange: share + partial loss to the
        active party, total loss to the server, masked gradients decrypted
        blind and applied, and (above layer 0) the chain factor rebuilt."""
        if not self.party_b.delta_ready_for(layer):
            raise ProtocolError(f"chain-rule factor not ready for layer {layer}")
        self.party_a.backward_send_loss_share(layer)
        self._pump()
        if layer >= 1 and not self.party_b.delta_ready_for(layer - 1):
            raise ProtocolError(f"backward cascade stalled below layer {layer}")

    def run_iteration(self, train_idx: np.ndarray) -> float:
        """One full-batch training iteration: forward, loss, backward, SGD."""
        self.party_b.set_train_idx(train_idx)
        self.forward_pass(training=True)
        loss = self.party_b.compute_top_delta()
        for layer in range(len(self.layer_dims) - 1, -1, -1):
            self.backward_round(layer)
        self._epoch += 1
        self.loss_history.append(loss)
        return loss

    def train(self, train_idx: np.ndarray, epochs: int) -> List[float]:
        return [self.run_iteration(train_idx) for _ in range(epochs)]

    def evaluate(self, idx: np.ndarray) -> float:
        """Dropout-free forward pass; accuracy judged at the label holder."""
        self.forward_pass(training=False)
        return self.party_b.accuracy(np.asarray(idx, dtype=np.int64))

    # -- reporting ---------------------------------------------------------------

    def counters_report(self) -> dict:
        return self.counters.snapshot()

    def transcript_digest(self) -> str:
        return self.transport.transcript_digest()

    def assembled_weights(self) -> SageModel:
        """Reassemble the full weight matrices from the party slices."""
        model = self.model_init.copy()
        for l, layer in enumerate(model.layers):
            layer.w_self[self.rows["self_a"][l]] = self.party_a.w_self[l]
            layer.w_self[self.rows["self_b"][l]] = self.party_b.w_self[l]
            layer.w_neigh[self.rows["neigh_a"][l]] = self.party_a.w_neigh[l]
            layer.w_neigh[self.rows["neigh_b"][l]] = self.party_b.w_neigh[l]
        return model

    def server_loss_by_layer(self) -> Dict[int, float]:
        return dict(self.server.loss_by_layer)


def session_setup(
    view_a: VerticalView,
    view_b: VerticalView,
    config: Optional[FederatedConfig] = None,
    model: Optional[SageModel] = None,
    transport=None,
) -> FederatedSession:
    """Create a session, distribute keys, exchange neighbor counts."""
    session = FederatedSession(view_a, view_b, config or FederatedConfig(), model, transport)
    session.setup()
    return session


def loss_decompose_encrypted(
    pk: PublicKey,
    frac_bits: int,
    act_a: float,
    share_a: np.ndarray,
    share_b: np.ndarray,
    rng: random.Random,
) -> Dict[str, Ciphertext]:
    """The encrypted loss decomposition [[L]] = [[L_A]] + [[L_B]] + [[L_AB]].

    Each party's squared terms are computed on its own plaintext before
    encryption; the cross term is one scalar multiplication per entry on
    the passive share, within the codec's single-product budget. All four
    ciphertexts carry two scale levels (frac_bits doubled).
    """
    import math as _math

    share_a = np.asarray(share_a, dtype=float).ravel()
    share_b = np.asarray(share_b, dtype=float).ravel()
    if share_a.shape != share_b.shape:
        raise ProtocolError("share dimension mismatch in loss decomposition")
    fb2 = 2 * frac_bits
    n = pk.n

    def enc2(value: float) -> Ciphertext:
        return encrypt(pk, int(round(value * (1 << fb2))) % n, rng)

    la = enc2(partial_loss_plain(share_a, act_a))
    lb = enc2(partial_loss_plain(share_b, act_a))
    quad2 = 8.0 / (3.0 * _math.pi * act_a)
    lab: Optional[Ciphertext] = None
    for sa, sb in zip(share_a, share_b):
        ct_a = encrypt(pk, int(round(sa * (1 << frac_bits))) % n, rng)
        term = mul_scalar_signed(ct_a, int(round(quad2 * sb * (1 << frac_bits))))
        lab = term if lab is None else add_ct(lab, term)
    if lab is None:
        lab = enc2(0.0)
    total = add_ct(add_ct(la, lb), lab)
    return {"la": la, "lb": lb, "lab": lab, "total": total}
