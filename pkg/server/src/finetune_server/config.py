"""Pinned server-side training defaults, echoed verbatim in /status."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ServerDefaults:
    optimizer: str = "adamw"
    batch_size: int = 16
    weight_decay: float = 0.01
    scheduler: str = "constant"
    max_sequence_length: int = 512
    checkpoint_fraction: int = 8  # snapshot every ceil(epochs / 8) epochs
    init_seed: int = 0
    device: str = "cpu"
    # builtin model geometry (used for base_model_id = "builtin:tiny")
    builtin_d_model: int = 64
    builtin_heads: int = 4
    builtin_layers: int = 2
    builtin_ff: int = 128

    def to_dict(self):
        return asdict(self)


DEFAULTS = ServerDefaults()
