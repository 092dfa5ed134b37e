"""Party state machines: passive A, active B, and the key-holding server C.

Division of knowledge, per the honest-but-curious threat model:

* A (passive) holds its feature block, its edge subset, its layer-0 weight
  rows and its half of the deeper neighbor matrices. It never sees labels
  or the upstream gradient in plaintext; gradients touching its private
  inputs are assembled homomorphically from B's encrypted upstream
  gradient, masked with fresh noise, and decrypted blind by the server.
* B (active) holds the labels and carries the chain-rule factor dL/dz in
  plaintext. Above layer 0 it also owns the self-transform weights
  outright: their inputs are the shared hidden state, so splitting them
  would add encrypted traffic without hiding anything B cannot already
  compute. B re-masks A's encrypted contribution to each hidden-state
  gradient so the server decrypts nothing unmasked.
* C (server) holds the Paillier secret key. During forward it decrypts
  only assembled pre-activation sums; during backward only the total
  surrogate loss and noise-masked gradient vectors.

Documented leakage (the literal reading of the forward algorithm): the
decrypted pre-activation z is returned to both data parties, so each
learns the combined linear output at every layer; train-fold membership is
visible to A through the upstream gradient's support list.

Scale discipline: ciphertext payloads are fixed-point at frac_bits; the
plaintext multipliers in gradient routes are quantized to scalar_bits
(coarser, covered by the 1e-4 equivalence budget), while the loss
decomposition keeps full frac_bits multipliers to meet its tighter stated
tolerance. Every ciphertext undergoes at most one scalar multiplication
before decryption; hot loops run on raw residues with counters updated in
bulk, and the depth contract is asserted per route.
"""

import math
import random
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import _modmath
from .._modmath import MPZ, invert_raw, powmod_raw
from ..codec import FixedPointCodec
from ..gnn import AdjIndex, softmax_xent_batch
from ..paillier import Ciphertext, ObfuscatorPool, PublicKey, SecretKey, keygen
from ..polyact import QuadActivation, act, act_deriv
from .counters import CostCounters
from .messages import (
    ACTIVE,
    KIND_FORWARD,
    KIND_HIDDEN_GRAD,
    LOSS_PARTIAL_A,
    LOSS_TOTAL,
    MAT_HIDDEN,
    MAT_NEIGH,
    MAT_SELF,
    PASSIVE,
    SERVER,
    EncPartialLoss,
    EncShare,
    EncUpstreamGrad,
    Envelope,
    MaskedEncGrad,
    MaskedPlainGrad,
    NeighborCount,
    PlainSum,
    PubKeyDist,
    encode_message,
)

MASK_MAGNITUDE_BITS = 20  # noise drawn uniformly from +-2^20 at codec resolution

SCALE_SINGLE = 1  # frac_bits
SCALE_PRODUCT = 2  # 2 * frac_bits (loss route)
SCALE_GRAD = 3  # frac_bits + scalar_bits (gradient routes)


class ProtocolError(RuntimeError):
    """Contract violation inside a session (stale round, bad dims, reuse)."""


@dataclass(frozen=True)
class PartyParams:
    session_id: bytes
    n_nodes: int
    layer_dims: Tuple[Tuple[int, int], ...]  # (in_dim, out_dim) per layer
    rows_self: Tuple[np.ndarray, ...]  # self-matrix rows this party owns
    rows_neigh: Tuple[np.ndarray, ...]  # neighbor-matrix rows this party owns
    act_a: float
    dropout_rate: float
    mask_seed: int
    learning_rate: float
    frac_bits: int
    test_mode: bool
    noise_seed: int
    obf_seed: int
    pool_size: int = 128
    # quantization of plaintext multipliers in gradient routes; exponent bits
    # drive the scalar-multiplication cost, and 16 bits keeps the error two
    # orders under the 1e-4 equivalence budget
    scalar_bits: int = 16

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims)


def epoch_dropout_masks(
    mask_seed: int, epoch: int, n_nodes: int, hidden_dims: Sequence[int], rate: float
) -> Optional[List[np.ndarray]]:
    """Shared dropout masks: both parties and the plaintext reference derive
    the identical masks from (mask_seed, epoch)."""
    if rate == 0.0:
        return None
    rng = np.random.default_rng([mask_seed, epoch])
    keep = 1.0 - rate
    return [(rng.random((n_nodes, d)) < keep) / keep for d in hidden_dims]


def partial_loss_plain(share: np.ndarray, act_a: float) -> float:
    """One party's surrogate-loss contribution over its share entries:
    sum of (4/(3 pi a)) s^2 + s/2, plus a/(4 pi) per entry."""
    s = np.asarray(share, dtype=float)
    quad = 4.0 / (3.0 * math.pi * act_a)
    return float((quad * s * s + 0.5 * s).sum() + s.size * act_a / (4.0 * math.pi))


class _PartyBase:
    """Crypto context, encoding, round bookkeeping, counters."""

    role: int = -1

    def __init__(self, params: PartyParams, transport, counters: CostCounters):
        self.params = params
        self.transport = transport
        self.counters = counters
        self.pk: Optional[PublicKey] = None
        self.codec: Optional[FixedPointCodec] = None
        self.pool: Optional[ObfuscatorPool] = None
        self._n = None  # mpz modulus
        self._n_sq = None
        self._enc_rng = random.Random(params.obf_seed)
        self._noise_rng = np.random.default_rng(params.noise_seed)
        self._send_round = 0
        self._last_seen: Dict[int, int] = {}
        self._mask_digests: Dict[Tuple[int, int], int] = {}

    # -- wire helpers ---------------------------------------------------------

    def _send(self, receiver: int, msg: Envelope) -> None:
        self._send_round += 1
        msg.round = self._send_round
        msg.sender = self.role
        msg.session_id = self.params.session_id
        self.transport.send(self.role, receiver, encode_message(msg))

    def _check_round(self, msg: Envelope) -> None:
        if msg.session_id != self.params.session_id:
            raise ProtocolError("message from a different session")
        last = self._last_seen.get(msg.sender, 0)
        if msg.round <= last:
            raise ProtocolError(
                f"stale round {msg.round} from role {msg.sender} (last {last})"
            )
        self._last_seen[msg.sender] = msg.round

    # -- crypto helpers -------------------------------------------------------

    def _install_key(self, pk: PublicKey) -> None:
        self.pk = pk
        self.codec = FixedPointCodec(pk.n, self.params.frac_bits)
        self._n = MPZ(pk.n)
        self._n_sq = MPZ(pk.n_sq)
        if self.params.test_mode:
            pool_rng = random.Random(self.params.obf_seed + 7919)
            self.pool = ObfuscatorPool(pk, pool_rng, size=self.params.pool_size)

    def _obfuscator(self):
        if self.pool is not None:
            return self.pool.draw(self._enc_rng)
        r = self._enc_rng.randrange(1, self.pk.n)
        return powmod_raw(MPZ(r), self._n, self._n_sq)

    def _enc_residue(self, m: int):
        """Encrypt a codec residue; returns a raw (mpz) ciphertext value."""
        self.counters.encryptions += 1
        return (1 + MPZ(m) * self._n) * self._obfuscator() % self._n_sq

    def _enc_array(self, values: np.ndarray, shift_bits: int) -> List:
        """Encrypt a float array elementwise at the given scale shift."""
        ints = np.rint(np.asarray(values, dtype=float).ravel() * (1 << shift_bits))
        n = self._n
        out = []
        for m in ints.astype(np.int64).tolist():
            out.append(self._enc_residue(m % n if m >= 0 else m % n))
        return out

    def _encode_scalars(self, values: np.ndarray) -> np.ndarray:
        """Signed multiplier integers at scalar_bits precision."""
        return np.rint(
            np.asarray(values, dtype=float) * (1 << self.params.scalar_bits)
        ).astype(np.int64)

    def _fresh_mask_ints(self, layer: int, matrix: int, shape: Tuple[int, int]) -> np.ndarray:
        """Noise integers at codec resolution, uniform in +-2^20, fresh per round."""
        span = 1 << (MASK_MAGNITUDE_BITS + self.params.frac_bits)
        ints = self._noise_rng.integers(-span, span + 1, size=shape)
        digest = hash(ints.tobytes())
        key = (layer, matrix)
        if ints.size and self._mask_digests.get(key) == digest:
            raise ProtocolError("noise mask reuse detected")
        self._mask_digests[key] = digest
        return ints

    def _mask_shift(self, scale: int) -> int:
        if scale == SCALE_SINGLE:
            return 0
        if scale == SCALE_PRODUCT:
            return self.params.frac_bits
        if scale == SCALE_GRAD:
            return self.params.scalar_bits
        raise ProtocolError(f"unknown scale level {scale}")

    def _mask_residues(self, ints: np.ndarray, scale: int) -> List[int]:
        shift = self._mask_shift(scale)
        n = self._n
        return [(int(k) << shift) % n for k in ints.ravel().tolist()]

    def _to_cts(self, raw_values: List) -> List[Ciphertext]:
        key_id, pk = self.pk.key_id, self.pk
        return [Ciphertext(int(v), key_id, pk) for v in raw_values]


class _DataParty(_PartyBase):
    """Forward-pass machinery common to A and B."""

    def __init__(
        self,
        params: PartyParams,
        transport,
        counters: CostCounters,
        features: np.ndarray,
        edges: Sequence[Tuple[int, int]],
        w_self: List[np.ndarray],
        w_neigh: List[np.ndarray],
    ):
        super().__init__(params, transport, counters)
        self.x = np.asarray(features, dtype=float)
        self.adj = AdjIndex(edges, params.n_nodes)
        self.dtot: Optional[np.ndarray] = None
        self._agg_scale: Optional[np.ndarray] = None
        self.w_self = [np.array(w, dtype=float) for w in w_self]
        self.w_neigh = [np.array(w, dtype=float) for w in w_neigh]
        for l, (w_s, w_n) in enumerate(zip(self.w_self, self.w_neigh)):
            if w_s.shape[0] != len(params.rows_self[l]) or w_n.shape[0] != len(
                params.rows_neigh[l]
            ):
                raise ProtocolError(f"layer {l}: weight slices do not match owned rows")
        self.binary_features = bool(np.all((self.x == 0) | (self.x == 1)))
        self._col_lists = [np.flatnonzero(self.x[:, i] == 1) for i in range(self.x.shape[1])]
        self.activation = QuadActivation(params.act_a)
        self.epoch = -1
        self.training = False
        self.drop_masks: Optional[List[np.ndarray]] = None
        self.h_tilde: List[Optional[np.ndarray]] = []
        self.z: List[Optional[np.ndarray]] = []
        self.share_plain: List[Optional[np.ndarray]] = []
        self.share_ct: List[Optional[List]] = []
        self.agg_local: List[Optional[np.ndarray]] = []

    # -- setup ---------------------------------------------------------------

    def send_neighbor_counts(self, receiver: int) -> None:
        self._send(receiver, NeighborCount(b"", 0, 0, counts=self.adj.degree))

    def on_neighbor_counts(self, msg: NeighborCount) -> None:
        self._check_round(msg)
        if len(msg.counts) != self.params.n_nodes:
            raise ProtocolError("neighbor count vector has wrong length")
        self.dtot = self.adj.degree + msg.counts
        self._agg_scale = np.where(self.dtot > 0, 1.0 / np.maximum(self.dtot, 1), 0.0)[:, None]

    def on_pubkey(self, msg: PubKeyDist) -> None:
        self._check_round(msg)
        self._install_key(PublicKey(msg.n, msg.n + 1, msg.key_id))

    # -- forward --------------------------------------------------------------

    def begin_epoch(self, epoch: int, training: bool) -> None:
        if self.pk is None or self.dtot is None:
            raise ProtocolError("session not fully set up")
        self.epoch = epoch
        self.training = training
        hidden_dims = [d_out for (_, d_out) in self.params.layer_dims[:-1]]
        self.drop_masks = (
            epoch_dropout_masks(
                self.params.mask_seed, epoch, self.params.n_nodes, hidden_dims,
                self.params.dropout_rate,
            )
            if training
            else None
        )
        n_l = self.params.n_layers
        self.h_tilde = [None] * n_l
        self.z = [None] * n_l
        self.share_plain = [None] * n_l
        self.share_ct = [None] * n_l
        self.agg_local = [None] * n_l

    def _self_input(self, layer: int) -> np.ndarray:
        """This party's self-matrix input: own features at layer 0, owned
        rows of the shared hidden state above (may be zero-width)."""
        if layer == 0:
            return self.x
        h = self.h_tilde[layer]
        if h is None:
            raise ProtocolError(f"layer {layer} input not available yet")
        return h[:, self.params.rows_self[layer]]

    def _local_aggregate(self, layer: int) -> np.ndarray:
        """Count-weighted neighbor aggregate over this party's edges,
        restricted to its neighbor-matrix rows."""
        src = self.x if layer == 0 else self.h_tilde[layer]
        agg = self.adj.neighbor_sum(src) * self._agg_scale
        return agg if layer == 0 else agg[:, self.params.rows_neigh[layer]]

    def forward_share(self, layer: int) -> None:
        h_rows = self._self_input(layer)
        f_rows = self._local_aggregate(layer)
        self.agg_local[layer] = f_rows
        share = h_rows @ self.w_self[layer] + f_rows @ self.w_neigh[layer]
        self.share_plain[layer] = share
        raw = self._enc_array(share, self.params.frac_bits)
        self.share_ct[layer] = raw
        out_dim = self.params.layer_dims[layer][1]
        is_output = layer == self.params.n_layers - 1
        self.counters.count_forward_units(layer, len(raw), is_output)
        self._send(
            SERVER,
            EncShare(
                b"", 0, 0,
                layer=layer, kind=KIND_FORWARD, role=self.role,
                rows=self.params.n_nodes, cols=out_dim, cts=self._to_cts(raw),
            ),
        )

    def on_plain_sum(self, msg: PlainSum) -> None:
        self._check_round(msg)
        if msg.kind != KIND_FORWARD:
            raise ProtocolError("unexpected plain-sum kind at data party")
        layer = msg.layer
        z = msg.values.reshape(msg.rows, msg.cols)
        self.z[layer] = z
        if layer < self.params.n_layers - 1:
            h = act(self.activation, z)
            if self.training and self.drop_masks is not None:
                h = h * self.drop_masks[layer]
            self.h_tilde[layer + 1] = h

    @property
    def logits(self) -> np.ndarray:
        out = self.z[self.params.n_layers - 1]
        if out is None:
            raise ProtocolError("forward pass has not reached the output layer")
        return out


class PassiveParty(_DataParty):
    """Party A: feature/edge holder without labels."""

    role = PASSIVE

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._grad_masks: Dict[Tuple[int, int], np.ndarray] = {}

    def handle(self, msg: Envelope) -> None:
        if isinstance(msg, PubKeyDist):
            self.on_pubkey(msg)
        elif isinstance(msg, NeighborCount):
            self.on_neighbor_counts(msg)
        elif isinstance(msg, PlainSum):
            self.on_plain_sum(msg)
        elif isinstance(msg, EncUpstreamGrad):
            self.on_upstream_grad(msg)
        elif isinstance(msg, MaskedPlainGrad):
            self.on_masked_plain_grad(msg)
        elif isinstance(msg, EncShare):
            self.on_peer_message(msg)
        else:
            raise ProtocolError(f"passive party cannot handle {type(msg).__name__}")

    def on_peer_message(self, msg: EncShare) -> None:
        self._check_round(msg)
        if msg.kind == KIND_FORWARD:
            return  # peer share per Algorithm 2; retained for symmetry, unused
        raise ProtocolError(f"unexpected share kind {msg.kind} at passive party")

    # Algorithm 2 opening move: resend the encrypted share plus the encrypted
    # partial loss to the active party.
    def backward_send_loss_share(self, layer: int) -> None:
        raw = self.share_ct[layer]
        share = self.share_plain[layer]
        if raw is None or share is None:
            raise ProtocolError(f"no cached forward share for layer {layer}")
        out_dim = self.params.layer_dims[layer][1]
        self.counters.count_backward_units(layer, len(raw))
        self._send(
            ACTIVE,
            EncShare(
                b"", 0, 0,
                layer=layer, kind=KIND_FORWARD, role=self.role,
                rows=self.params.n_nodes, cols=out_dim, cts=self._to_cts(raw),
            ),
        )
        la = partial_loss_plain(share, self.params.act_a)
        fb2 = 2 * self.params.frac_bits
        la_raw = self._enc_residue(int(round(la * (1 << fb2))) % self.pk.n)
        self.counters.count_backward_units(layer, 1)
        self._send(
            ACTIVE,
            EncPartialLoss(
                b"", 0, 0, layer=layer, which=LOSS_PARTIAL_A,
                ct=Ciphertext(int(la_raw), self.pk.key_id, self.pk),
            ),
        )

    # -- homomorphic gradient assembly ----------------------------------------

    def on_upstream_grad(self, msg: EncUpstreamGrad) -> None:
        self._check_round(msg)
        layer = msg.layer
        support = msg.support.astype(np.int64)
        if len(msg.cts) != len(support) * msg.cols:
            raise ProtocolError("upstream gradient vector does not match its support")
        delta_raw = [MPZ(ct.value) for ct in msg.cts]
        out_dim = msg.cols
        need_inverses = not (layer == 0 and self.binary_features)
        delta_inv = (
            [invert_raw(v, self._n_sq) for v in delta_raw] if need_inverses else None
        )
        if delta_inv is not None:
            self.counters.ciphertext_scalar_muls += 0  # inversions are not scalar products
        if layer == 0:
            self._send_masked_grad(layer, MAT_SELF, delta_raw, delta_inv, support, out_dim)
        self._send_masked_grad(layer, MAT_NEIGH, delta_raw, delta_inv, support, out_dim)
        if layer >= 1:
            self._send_hidden_contrib(layer, delta_raw, delta_inv, support, out_dim)

    def _pow_signed(self, base_idx: int, c: int, delta_raw, delta_inv):
        if c >= 0:
            return powmod_raw(delta_raw[base_idx], c, self._n_sq)
        return powmod_raw(delta_inv[base_idx], -c, self._n_sq)

    def _send_masked_grad(
        self,
        layer: int,
        matrix: int,
        delta_raw: List,
        delta_inv: Optional[List],
        support: np.ndarray,
        out_dim: int,
    ) -> None:
        """Gradient of this party's weight slice, assembled under encryption.

        self  (layer 0 only): g[i,j] = sum_v x[v,i] delta[v,j]
        neigh:                g[i,j] = sum_v agg[v,i] delta[v,j]

        The accumulator starts from the fresh encrypted noise mask, so the
        ciphertexts that leave already carry the mask. With 0/1 features the
        layer-0 products degenerate to homomorphic additions: directly for
        the self matrix, via the once-scaled spread of delta/dtot for the
        neighbor matrix.
        """
        inputs = self._self_input(layer) if matrix == MAT_SELF else self.agg_local[layer]
        in_dim = inputs.shape[1]
        binary_fast = layer == 0 and self.binary_features
        scale = SCALE_SINGLE if (binary_fast and matrix == MAT_SELF) else SCALE_GRAD
        mask_ints = self._fresh_mask_ints(layer, matrix, (in_dim, out_dim))
        self._grad_masks[(layer, matrix)] = mask_ints
        acc = [self._enc_residue(m) for m in self._mask_residues(mask_ints, scale)]
        n_sq = self._n_sq
        adds = muls = 0
        if binary_fast and matrix == MAT_SELF:
            support_pos = {int(v): k for k, v in enumerate(support)}
            for i, col in enumerate(self._col_lists):
                off = i * out_dim
                for u in col.tolist():
                    s_idx = support_pos.get(u)
                    if s_idx is None:
                        continue
                    base = s_idx * out_dim
                    for j in range(out_dim):
                        acc[off + j] = acc[off + j] * delta_raw[base + j] % n_sq
                    adds += out_dim
        elif binary_fast and matrix == MAT_NEIGH:
            adds, muls = self._accumulate_neigh_binary(acc, out_dim, delta_raw, support)
        else:
            coeffs = self._encode_scalars(inputs[support])
            for s_idx in range(len(support)):
                base = s_idx * out_dim
                row = coeffs[s_idx]
                for i in range(in_dim):
                    c = int(row[i])
                    if c == 0:
                        continue
                    off = i * out_dim
                    for j in range(out_dim):
                        acc[off + j] = (
                            acc[off + j]
                            * self._pow_signed(base + j, c, delta_raw, delta_inv)
                            % n_sq
                        )
                    muls += out_dim
        self.counters.ciphertext_adds += adds + muls
        self.counters.ciphertext_scalar_muls += muls
        if muls:
            self.counters.max_product_depth = max(self.counters.max_product_depth, 1)
        self.counters.count_backward_units(layer, len(acc))
        self._send(
            SERVER,
            MaskedEncGrad(
                b"", 0, 0,
                layer=layer, matrix=matrix, role=self.role, scale=scale,
                rows=in_dim, cols=out_dim, cts=self._to_cts(acc),
            ),
        )

    def _accumulate_neigh_binary(
        self, acc: List, out_dim: int, delta_raw: List, support: np.ndarray
    ) -> Tuple[int, int]:
        """Layer-0 neighbor gradient with 0/1 features:

            g[i,j] = sum_u x[u,i] T[u,j],   T = spread_own(delta / dtot),

        one scalar multiplication per upstream entry, then additions along
        edges and feature incidence."""
        n_sq = self._n_sq
        sb = self.params.scalar_bits
        scale_v = self._agg_scale.ravel()
        tilde: List[Optional[List]] = [None] * self.params.n_nodes
        muls = adds = 0
        for s_idx, v in enumerate(support.tolist()):
            c = int(round(float(scale_v[v]) * (1 << sb)))
            if c == 0:
                continue
            base = s_idx * out_dim
            tilde[v] = [powmod_raw(delta_raw[base + j], c, n_sq) for j in range(out_dim)]
            muls += out_dim
        neigh_lists = self.adj.neighbor_lists()
        t_rows: List[Optional[List]] = [None] * self.params.n_nodes
        for u in range(self.params.n_nodes):
            row = None
            for v in neigh_lists[u]:
                tv = tilde[v]
                if tv is None:
                    continue
                if row is None:
                    row = list(tv)
                else:
                    for j in range(out_dim):
                        row[j] = row[j] * tv[j] % n_sq
                    adds += out_dim
            t_rows[u] = row
        for i, col in enumerate(self._col_lists):
            off = i * out_dim
            for u in col.tolist():
                row = t_rows[u]
                if row is None:
                    continue
                for j in range(out_dim):
                    acc[off + j] = acc[off + j] * row[j] % n_sq
                adds += out_dim
        return adds, muls

    def _send_hidden_contrib(
        self,
        layer: int,
        delta_raw: List,
        delta_inv: List,
        support: np.ndarray,
        out_dim: int,
    ) -> None:
        """A's additive contribution to dL/dH(layer-1): the spread of the
        upstream gradient over A's edges through A's neighbor-matrix rows.

            C[v,i] = sum_{v' in N_A(v)} sum_j delta[v',j] (w_neigh[i,j]/dtot[v'])

        Computed as one scalar multiplication per (v', i, j) with the scale
        folded into the multiplier, then additions along edges - every
        ciphertext stays at product depth one.
        """
        rows = self.params.rows_neigh[layer]
        n_rows = len(rows)
        n = self.params.n_nodes
        n_sq = self._n_sq
        scale_v = self._agg_scale.ravel()
        muls = adds = 0
        # per-support-node kernels K[v',i] = prod_j delta[v',j]^(w[i,j]*scale)
        kernels: List[Optional[List]] = [None] * n
        w = self.w_neigh[layer]
        for s_idx, v in enumerate(support.tolist()):
            sv = float(scale_v[v])
            if sv == 0.0 or n_rows == 0:
                continue
            coeffs = self._encode_scalars(w * sv)  # (n_rows, out)
            base = s_idx * out_dim
            row_k: List[Optional[int]] = []
            for i in range(n_rows):
                acc = None
                for j in range(out_dim):
                    c = int(coeffs[i, j])
                    if c == 0:
                        continue
                    term = self._pow_signed(base + j, c, delta_raw, delta_inv)
                    acc = term if acc is None else acc * term % n_sq
                    muls += 1
                row_k.append(acc)
            kernels[v] = row_k
        neigh_lists = self.adj.neighbor_lists()
        zero_ct = None
        out_raw: List = []
        for v in range(n):
            row_acc: List[Optional[int]] = [None] * n_rows
            for u in neigh_lists[v]:
                ku = kernels[u]
                if ku is None:
                    continue
                for i in range(n_rows):
                    term = ku[i]
                    if term is None:
                        continue
                    cur = row_acc[i]
                    row_acc[i] = term if cur is None else cur * term % n_sq
                    adds += 1
            for i in range(n_rows):
                if row_acc[i] is None:
                    if zero_ct is None:
                        zero_ct = self._enc_residue(0)
                    row_acc[i] = zero_ct
            out_raw.extend(row_acc)
        self.counters.ciphertext_scalar_muls += muls
        self.counters.ciphertext_adds += adds + muls
        if muls:
            self.counters.max_product_depth = max(self.counters.max_product_depth, 1)
        self.counters.count_backward_units(layer, len(out_raw))
        self._send(
            ACTIVE,
            EncShare(
                b"", 0, 0,
                layer=layer, kind=KIND_HIDDEN_GRAD, role=self.role,
                rows=n, cols=n_rows, cts=self._to_cts(out_raw),
            ),
        )

    def on_masked_plain_grad(self, msg: MaskedPlainGrad) -> None:
        self._check_round(msg)
        if msg.role != self.role:
            raise ProtocolError("masked gradient routed to the wrong party")
        key = (msg.layer, msg.matrix)
        mask_ints = self._grad_masks.pop(key, None)
        if mask_ints is None:
            raise ProtocolError("no mask on record for this gradient (reuse or replay)")
        grad = msg.values.reshape(msg.rows, msg.cols) - mask_ints * (
            2.0 ** -self.params.frac_bits
        )
        target = self.w_self[msg.layer] if msg.matrix == MAT_SELF else self.w_neigh[msg.layer]
        if grad.shape != target.shape:
            raise ProtocolError("gradient shape does not match weight slice")
        target -= self.params.learning_rate * grad


class ActiveParty(_DataParty):
    """Party B: label holder; drives the loss and the chain rule."""

    role = ACTIVE

    def __init__(
        self,
        params: PartyParams,
        transport,
        counters: CostCounters,
        features: np.ndarray,
        edges: Sequence[Tuple[int, int]],
        w_self: List[np.ndarray],
        w_neigh: List[np.ndarray],
        labels: np.ndarray,
        num_classes: int,
    ):
        super().__init__(params, transport, counters, features, edges, w_self, w_neigh)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = num_classes
        self.train_idx: Optional[np.ndarray] = None
        self._peer_share: Dict[int, List[int]] = {}
        self._delta: Optional[np.ndarray] = None
        self._delta_layer: Optional[int] = None
        self._own_hidden_block: Dict[int, np.ndarray] = {}
        self._hidden_mask: Dict[int, np.ndarray] = {}
        self._grad_masks: Dict[Tuple[int, int], np.ndarray] = {}
        self.last_loss: Optional[float] = None
        self.loss_history: List[float] = []

    def set_train_idx(self, train_idx: np.ndarray) -> None:
        self.train_idx = np.asarray(train_idx, dtype=np.int64)

    def handle(self, msg: Envelope) -> None:
        if isinstance(msg, PubKeyDist):
            self.on_pubkey(msg)
        elif isinstance(msg, NeighborCount):
            self.on_neighbor_counts(msg)
        elif isinstance(msg, PlainSum):
            self.on_plain_sum(msg)
        elif isinstance(msg, EncShare):
            self.on_peer_share(msg)
        elif isinstance(msg, EncPartialLoss):
            self.on_partial_loss(msg)
        elif isinstance(msg, MaskedPlainGrad):
            self.on_masked_plain_grad(msg)
        else:
            raise ProtocolError(f"active party cannot handle {type(msg).__name__}")

    # -- loss and chain rule ----------------------------------------------------

    def compute_top_delta(self) -> float:
        """Cross-entropy over the training fold on the assembled logits."""
        if self.train_idx is None:
            raise ProtocolError("training fold not set")
        loss, delta = softmax_xent_batch(self.logits, self.labels, self.train_idx)
        self._delta = delta
        self._delta_layer = self.params.n_layers - 1
        self.last_loss = loss
        self.loss_history.append(loss)
        return loss

    def delta_ready_for(self, layer: int) -> bool:
        return self._delta_layer == layer

    def on_peer_share(self, msg: EncShare) -> None:
        self._check_round(msg)
        if msg.kind == KIND_FORWARD:
            self._peer_share[msg.layer] = [MPZ(ct.value) for ct in msg.cts]
        elif msg.kind == KIND_HIDDEN_GRAD:
            self._on_hidden_contrib(msg)
        else:
            raise ProtocolError(f"unexpected share kind {msg.kind}")

    def on_partial_loss(self, msg: EncPartialLoss) -> None:
        self._check_round(msg)
        if msg.which != LOSS_PARTIAL_A:
            raise ProtocolError("active party expects the passive partial loss")
        layer = msg.layer
        if self._peer_share.get(layer) is None:
            raise ProtocolError("partial loss arrived before the peer share")
        if self._delta_layer != layer:
            raise ProtocolError(
                f"backward round for layer {layer} but chain factor is at {self._delta_layer}"
            )
        self._run_backward_round(layer, MPZ(msg.ct.value))

    def _run_backward_round(self, layer: int, la_raw) -> None:
        out_dim = self.params.layer_dims[layer][1]
        share_b = self.share_plain[layer]
        peer_raw = self._peer_share.pop(layer)
        total_raw = self._loss_total_raw(la_raw, peer_raw, share_b)
        self.counters.count_backward_units(layer, 1)
        self._send(
            SERVER,
            EncPartialLoss(
                b"", 0, 0, layer=layer, which=LOSS_TOTAL,
                ct=Ciphertext(int(total_raw), self.pk.key_id, self.pk),
            ),
        )
        # mirror of Algorithm 2: own share goes back to the passive party
        raw_b = self.share_ct[layer]
        self.counters.count_backward_units(layer, len(raw_b))
        self._send(
            PASSIVE,
            EncShare(
                b"", 0, 0,
                layer=layer, kind=KIND_FORWARD, role=self.role,
                rows=self.params.n_nodes, cols=out_dim, cts=self._to_cts(raw_b),
            ),
        )
        self._send_upstream(layer)
        self._send_own_grads(layer)
        if layer >= 1:
            self._prepare_own_hidden_block(layer)

    def _loss_total_raw(self, la_raw, peer_raw: List, share_b: np.ndarray):
        """[[L]] = [[L_A]] (+) [[L_B]] (+) [[L_AB]]; the cross term uses full
        frac_bits multipliers to honor the loss-route tolerance."""
        n_sq = self._n_sq
        fb = self.params.frac_bits
        quad2 = 8.0 / (3.0 * math.pi * self.params.act_a)
        lb = partial_loss_plain(share_b, self.params.act_a)
        acc = la_raw * self._enc_residue(int(round(lb * (1 << (2 * fb)))) % self.pk.n) % n_sq
        coeffs = np.rint(quad2 * share_b.ravel() * (1 << fb)).astype(np.int64)
        muls = 0
        for raw, c in zip(peer_raw, coeffs.tolist()):
            if c == 0:
                continue
            if c < 0:
                acc = acc * powmod_raw(invert_raw(raw, n_sq), -c, n_sq) % n_sq
            else:
                acc = acc * powmod_raw(raw, c, n_sq) % n_sq
            muls += 1
        self.counters.ciphertext_scalar_muls += muls
        self.counters.ciphertext_adds += muls + 1
        if muls:
            self.counters.max_product_depth = max(self.counters.max_product_depth, 1)
        return acc

    def _send_upstream(self, layer: int) -> None:
        """Ship [[dL/dz]] to the passive party, restricted to its support."""
        delta = self._delta
        nonzero = np.flatnonzero(np.abs(delta).sum(axis=1) > 0)
        support = nonzero if len(nonzero) < self.params.n_nodes else np.arange(self.params.n_nodes)
        raw = self._enc_array(delta[support], self.params.frac_bits)
        self.counters.count_backward_units(layer, len(raw))
        self._send(
            PASSIVE,
            EncUpstreamGrad(
                b"", 0, 0,
                layer=layer, rows=len(support), cols=delta.shape[1],
                support=support, cts=self._to_cts(raw),
            ),
        )

    def _send_own_grads(self, layer: int) -> None:
        """B's weight gradients in plaintext, encrypted plus an encrypted
        fresh mask (Algorithm 2's [[dL/dw]] + [[sigma]])."""
        delta = self._delta
        n_sq = self._n_sq
        for matrix, inputs in (
            (MAT_SELF, self._self_input(layer)),
            (MAT_NEIGH, self.agg_local[layer]),
        ):
            grad = inputs.T @ delta
            mask_ints = self._fresh_mask_ints(layer, matrix, grad.shape)
            self._grad_masks[(layer, matrix)] = mask_ints
            grad_raw = self._enc_array(grad, self.params.frac_bits)
            mask_res = self._mask_residues(mask_ints, SCALE_SINGLE)
            masked = [g * self._enc_residue(m) % n_sq for g, m in zip(grad_raw, mask_res)]
            self.counters.ciphertext_adds += len(masked)
            self.counters.count_backward_units(layer, len(masked))
            self._send(
                SERVER,
                MaskedEncGrad(
                    b"", 0, 0,
                    layer=layer, matrix=matrix, role=self.role, scale=SCALE_SINGLE,
                    rows=grad.shape[0], cols=grad.shape[1], cts=self._to_cts(masked),
                ),
            )

    def _prepare_own_hidden_block(self, layer: int) -> None:
        """B's plaintext part of dL/dH(layer-1): the full self-transform
        term plus the spread over B's own edges through B's neighbor rows."""
        delta = self._delta
        in_dim = self.params.layer_dims[layer][0]
        u = delta @ self.w_self[layer].T
        if u.shape[1] != in_dim:
            raise ProtocolError("active party must own the full self matrix above layer 0")
        spread = self.adj.neighbor_sum(delta * self._agg_scale)
        rows_b = self.params.rows_neigh[layer]
        u[:, rows_b] += spread @ self.w_neigh[layer].T
        self._own_hidden_block[layer] = u

    def _on_hidden_contrib(self, msg: EncShare) -> None:
        """A's encrypted C_A arrives: re-mask and hand to the server."""
        layer = msg.layer
        mask_ints = self._fresh_mask_ints(layer, MAT_HIDDEN, (msg.rows, msg.cols))
        self._hidden_mask[layer] = mask_ints
        mask_res = self._mask_residues(mask_ints, SCALE_GRAD)
        n_sq = self._n_sq
        masked = [
            MPZ(ct.value) * self._enc_residue(m) % n_sq for ct, m in zip(msg.cts, mask_res)
        ]
        self.counters.ciphertext_adds += len(masked)
        self.counters.count_backward_units(layer, len(masked))
        self._send(
            SERVER,
            MaskedEncGrad(
                b"", 0, 0,
                layer=layer, matrix=MAT_HIDDEN, role=self.role, scale=SCALE_GRAD,
                rows=msg.rows, cols=msg.cols, cts=self._to_cts(masked),
            ),
        )

    def on_masked_plain_grad(self, msg: MaskedPlainGrad) -> None:
        self._check_round(msg)
        if msg.matrix == MAT_HIDDEN:
            self._finish_hidden(msg)
            return
        key = (msg.layer, msg.matrix)
        mask_ints = self._grad_masks.pop(key, None)
        if mask_ints is None:
            raise ProtocolError("no mask on record for this gradient")
        grad = msg.values.reshape(msg.rows, msg.cols) - mask_ints * (
            2.0 ** -self.params.frac_bits
        )
        target = self.w_self[msg.layer] if msg.matrix == MAT_SELF else self.w_neigh[msg.layer]
        target -= self.params.learning_rate * grad

    def _finish_hidden(self, msg: MaskedPlainGrad) -> None:
        layer = msg.layer
        mask_ints = self._hidden_mask.pop(layer, None)
        if mask_ints is None:
            raise ProtocolError("hidden-gradient mask missing")
        contrib_a = msg.values.reshape(msg.rows, msg.cols) - mask_ints * (
            2.0 ** -self.params.frac_bits
        )
        u = self._own_hidden_block.pop(layer)
        in_dim = self.params.layer_dims[layer][0]
        rows_a = np.setdiff1d(np.arange(in_dim), self.params.rows_neigh[layer])
        if contrib_a.shape[1] != len(rows_a):
            raise ProtocolError("passive hidden contribution has unexpected width")
        u[:, rows_a] += contrib_a
        if self.training and self.drop_masks is not None:
            u = u * self.drop_masks[layer - 1]
        self._delta = u * act_deriv(self.activation, self.z[layer - 1])
        self._delta_layer = layer - 1

    # -- evaluation ---------------------------------------------------------------

    def accuracy(self, idx: np.ndarray) -> float:
        pred = self.logits[idx].argmax(axis=1)
        return float((pred == self.labels[idx]).mean())


class ServerParty(_PartyBase):
    """Party C: generates the key pair, decrypts assembled sums, the total
    surrogate loss, and noise-masked gradients. Logs every decryption
    context so blindness can be asserted from outside."""

    role = SERVER

    def __init__(
        self, params: PartyParams, transport, counters: CostCounters, key_bits: int, key_seed: int
    ):
        super().__init__(params, transport, counters)
        self.key_bits = key_bits
        self.key_seed = key_seed
        self.sk: Optional[SecretKey] = None
        self._pending_shares: Dict[int, Dict[int, EncShare]] = {}
        self.decrypt_log: List[Tuple[str, int]] = []
        self.loss_by_layer: Dict[int, float] = {}

    def distribute_key(self) -> None:
        pk, sk = keygen(
            self.key_bits, random.Random(self.key_seed), test_mode=self.params.test_mode
        )
        self.sk = sk
        self.pk = pk
        self.codec = FixedPointCodec(pk.n, self.params.frac_bits)
        self._n = MPZ(pk.n)
        self._n_sq = MPZ(pk.n_sq)
        for receiver in (PASSIVE, ACTIVE):
            self._send(receiver, PubKeyDist(b"", 0, 0, n=pk.n, key_id=pk.key_id))

    def handle(self, msg: Envelope) -> None:
        if isinstance(msg, EncShare):
            self.on_enc_share(msg)
        elif isinstance(msg, EncPartialLoss):
            self.on_total_loss(msg)
        elif isinstance(msg, MaskedEncGrad):
            self.on_masked_grad(msg)
        else:
            raise ProtocolError(f"server cannot handle {type(msg).__name__}")

    def _decrypt_raw(self, values: List[int]) -> List[int]:
        self.counters.decryptions += len(values)
        crt = getattr(self.sk, "_crt", None)
        if crt is not None:
            return [crt.decrypt(v) for v in values]
        n, n_sq, lam, mu = self.sk.n, self.sk.n * self.sk.n, self.sk.lam, self.sk.mu
        return [(int(powmod_raw(v, lam, n_sq)) - 1) // n * mu % n for v in values]

    def _decode_array(self, plain: List[int], rows: int, cols: int, scale: int) -> np.ndarray:
        fb = self.params.frac_bits
        if scale == SCALE_SINGLE:
            shift = 0
        elif scale == SCALE_PRODUCT:
            shift = fb
        elif scale == SCALE_GRAD:
            shift = self.params.scalar_bits
        else:
            raise ProtocolError(f"unknown scale level {scale}")
        half = 1 << (shift - 1) if shift else 0
        n = self.sk.n
        out = np.empty(rows * cols)
        for k, m in enumerate(plain):
            signed = m - n if m > n // 2 else m
            if shift:
                if signed >= 0:
                    signed = (signed + half) >> shift
                else:
                    signed = -((-signed + half) >> shift)
            out[k] = signed
        return (out * 2.0**-fb).reshape(rows, cols)

    def on_enc_share(self, msg: EncShare) -> None:
        self._check_round(msg)
        if msg.kind != KIND_FORWARD:
            raise ProtocolError("server only assembles forward shares")
        layer_box = self._pending_shares.setdefault(msg.layer, {})
        if msg.role in layer_box:
            raise ProtocolError(f"duplicate share from role {msg.role} at layer {msg.layer}")
        layer_box[msg.role] = msg
        if len(layer_box) < 2:
            return
        a, b = layer_box.pop(PASSIVE), layer_box.pop(ACTIVE)
        if (a.rows, a.cols) != (b.rows, b.cols):
            raise ProtocolError(
                f"share dimension mismatch at layer {msg.layer}: "
                f"{(a.rows, a.cols)} vs {(b.rows, b.cols)}"
            )
        n_sq = self._n_sq
        summed = [MPZ(x.value) * y.value % n_sq for x, y in zip(a.cts, b.cts)]
        self.counters.ciphertext_adds += len(summed)
        plain = self._decrypt_raw(summed)
        self.decrypt_log.append(("forward_sum", msg.layer))
        values = self._decode_array(plain, a.rows, a.cols, SCALE_SINGLE)
        for receiver in (PASSIVE, ACTIVE):
            self._send(
                receiver,
                PlainSum(
                    b"", 0, 0,
                    layer=msg.layer, kind=KIND_FORWARD,
                    rows=a.rows, cols=a.cols, values=values,
                ),
            )

    def on_total_loss(self, msg: EncPartialLoss) -> None:
        self._check_round(msg)
        if msg.which != LOSS_TOTAL:
            raise ProtocolError("server only decrypts the total loss")
        (plain,) = self._decrypt_raw([msg.ct.value])
        self.decrypt_log.append(("loss", msg.layer))
        self.loss_by_layer[msg.layer] = self.codec.decode_product(plain)

    def on_masked_grad(self, msg: MaskedEncGrad) -> None:
        self._check_round(msg)
        plain = self._decrypt_raw([ct.value for ct in msg.cts])
        values = self._decode_array(plain, msg.rows, msg.cols, msg.scale)
        context = "masked_hidden" if msg.matrix == MAT_HIDDEN else "masked_grad"
        self.decrypt_log.append((context, msg.layer))
        receiver = ACTIVE if msg.matrix == MAT_HIDDEN else msg.role
        self._send(
            receiver,
            MaskedPlainGrad(
                b"", 0, 0,
                layer=msg.layer, matrix=msg.matrix, role=msg.role,
                rows=msg.rows, cols=msg.cols, values=values,
            ),
        )
