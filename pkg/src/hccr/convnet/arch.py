"""Layer plans for the character network.

Hidden layers are numbered from 1: the conv layers first, then the fully
connected ones. The output (softmax) layer follows the last hidden layer.
"""
from __future__ import annotations

from dataclasses import dataclass

FULL_DROPOUT = (0.0, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50, 0.0)


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 8
    size: int = 32
    conv_widths: tuple = (50, 100, 150, 200, 250, 300, 350, 400)
    pool_after: tuple = (2, 4, 6, 8)  # 1-based conv indices followed by 2x2 max-pooling
    fc_widths: tuple = (900, 200)
    num_classes: int = 3755
    dropout: tuple = FULL_DROPOUT  # one probability per hidden layer
    slope: float = 1.0 / 3.0

    def __post_init__(self):
        object.__setattr__(self, "conv_widths", tuple(int(w) for w in self.conv_widths))
        object.__setattr__(self, "pool_after", tuple(int(p) for p in self.pool_after))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        object.__setattr__(self, "dropout", tuple(float(p) for p in self.dropout))
        if not self.conv_widths or not self.fc_widths:
            raise ValueError("need at least one conv and one fully connected layer")
        if len(self.dropout) != self.num_hidden:
            raise ValueError(f"expected {self.num_hidden} dropout rates, got {len(self.dropout)}")
        if self.dropout[0] != 0.0 or self.dropout[-1] != 0.0:
            raise ValueError("the first and the last hidden layer take no dropout")
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ValueError("dropout rates must lie in [0, 1)")
        if any(not 1 <= p <= len(self.conv_widths) for p in self.pool_after):
            raise ValueError("pool_after refers to a missing conv layer")
        if self.size % (2 ** len(self.pool_after)):
            raise ValueError(f"input size {self.size} is not divisible by 2^{len(self.pool_after)}")
        if min(self.conv_widths + self.fc_widths) < 1 or self.num_classes < 2 or self.in_channels < 1:
            raise ValueError("layer widths must be positive and num_classes >= 2")

    @property
    def num_conv(self) -> int:
        return len(self.conv_widths)

    @property
    def num_hidden(self) -> int:
        return len(self.conv_widths) + len(self.fc_widths)

    @property
    def final_size(self) -> int:
        return self.size // 2 ** len(self.pool_after)

    @property
    def flatten_dim(self) -> int:
        return self.conv_widths[-1] * self.final_size**2

    @property
    def source_dim(self) -> int:
        """Width of the last hidden layer (the bottleneck)."""
        return self.fc_widths[-1]

    def param_shapes(self) -> list:
        """(weight, bias) shapes per layer in declaration order; conv weights are HWIO."""
        shapes = []
        cin = self.in_channels
        for w in self.conv_widths:
            shapes += [(3, 3, cin, w), (w,)]
            cin = w
        fin = self.flatten_dim
        for w in self.fc_widths + (self.num_classes,):
            shapes += [(fin, w), (w,)]
            fin = w
        return shapes

    def param_count(self) -> int:
        total = 0
        for shape in self.param_shapes():
            size = 1
            for s in shape:
                size *= s
            total += size
        return total


def full_architecture(num_classes: int = 3755) -> Architecture:
    return Architecture(num_classes=num_classes)


def toy_architecture(num_classes: int = 10, in_channels: int = 8, size: int = 32,
                     dropout: bool = True) -> Architecture:
    """Three conv blocks and two FC layers; trains on a CPU in minutes."""
    rates = (0.0, 0.1, 0.2, 0.3, 0.0) if dropout else (0.0,) * 5
    return Architecture(in_channels=in_channels, size=size, conv_widths=(12, 24, 32),
                        pool_after=(1, 2, 3), fc_widths=(64, 32), num_classes=num_classes,
                        dropout=rates)
