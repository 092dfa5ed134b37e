"""Communication and computation counters for a protocol session.

Counting convention follows the complexity analysis the counters are
checked against: one unit = one ciphertext transmitted, plaintext replies
are free. ``messages_forward`` covers the hidden-layer pre-activation
assemblies only (two parties x m activations x (n-1) hidden layers, the
2m(n-1) quantity); the output-layer logits assembly is tracked separately
in ``messages_forward_output``. Backward units are tallied per layer so
the per-consecutive-layer-pair bound 7(m^2+m+1) can be asserted directly.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict


@dataclass
class CostCounters:
    messages_forward: int = 0
    messages_forward_output: int = 0
    messages_backward: int = 0
    ciphertext_adds: int = 0
    ciphertext_scalar_muls: int = 0
    encryptions: int = 0
    decryptions: int = 0
    forward_by_layer: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    backward_by_layer: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    max_product_depth: int = 0

    def count_forward_units(self, layer: int, units: int, output_layer: bool) -> None:
        if output_layer:
            self.messages_forward_output += units
        else:
            self.messages_forward += units
        self.forward_by_layer[layer] += units

    def count_backward_units(self, layer: int, units: int) -> None:
        self.messages_backward += units
        self.backward_by_layer[layer] += units

    def total_units(self) -> int:
        return self.messages_forward + self.messages_forward_output + self.messages_backward

    def snapshot(self) -> dict:
        return {
            "messages_forward": self.messages_forward,
            "messages_forward_output": self.messages_forward_output,
            "messages_backward": self.messages_backward,
            "backward_by_layer": dict(self.backward_by_layer),
            "forward_by_layer": dict(self.forward_by_layer),
            "ciphertext_adds": self.ciphertext_adds,
            "ciphertext_scalar_muls": self.ciphertext_scalar_muls,
            "encryptions": self.encryptions,
            "decryptions": self.decryptions,
            "max_product_depth": self.max_product_depth,
            "total_units": self.total_units(),
        }
