"""ConvNeXt-style Deep Image Prior network mapping a sinogram to an image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .layers import Conv2d, ConvNeXtBlock, Module


@dataclass(frozen=True)
class DipArchitecture:
    channels: int = 16
    stem_kernel: int = 3
    block_kernel: int = 7
    expansion: int = 4
    sino_blocks: int = 4
    image_blocks: int = 2

    def describe(self) -> list[str]:
        c = self.channels
        return (
            [f"stem conv {self.stem_kernel}x{self.stem_kernel} 1->{c}, no padding"]
            + [f"convnext dw{self.block_kernel} x{self.expansion} ({c}ch, sinogram grid)"] * self.sino_blocks
            + ["bilinear resize to n x n"]
            + [f"convnext dw{self.block_kernel} x{self.expansion} ({c}ch, image grid)"] * self.image_blocks
            + [f"conv 1x1 {c}->1", "sigmoid"]
        )


class DipNetwork(Module):
    """``N_W(S)``: untrained CNN whose weights are optimised per sinogram.

    Parameters
    ----------
    sino_shape : (int, int)
        ``(angles, detector_bins)`` of the input sinogram.
    image_side : int
        Side ``n`` of the square output image.
    seed : int
        Seed for the weight initialisation.
    """

    def __init__(self, sino_shape: tuple[int, int], image_side: int, seed: int = 0,
                 arch: DipArchitecture = DipArchitecture()):
        self.sino_shape = tuple(int(v) for v in sino_shape)
        self.image_side = int(image_side)
        self.arch = arch
        A, D = self.sino_shape
        if A < arch.stem_kernel or D < arch.stem_kernel:
            raise ValueError(f"sinogram {self.sino_shape} is smaller than the {arch.stem_kernel}x{arch.stem_kernel} stem")
        rng = np.random.default_rng(seed)
        c = arch.channels
        self.stem = Conv2d(rng, 1, c, arch.stem_kernel, padding=0)
        self.sino_blocks = [ConvNeXtBlock(rng, c, arch.block_kernel, arch.expansion) for _ in range(arch.sino_blocks)]
        self.image_blocks = [ConvNeXtBlock(rng, c, arch.block_kernel, arch.expansion) for _ in range(arch.image_blocks)]
        self.head = Conv2d(rng, c, 1, 1)
        self.name_parameters()

    def prepare_input(self, sino) -> Tensor:
        values = np.asarray(sino.values if hasattr(sino, "values") else sino, dtype=np.float64)
        if values.shape != self.sino_shape:
            raise ValueError(f"sinogram shape {values.shape} does not match network input {self.sino_shape}")
        peak = np.max(np.abs(values))
        scaled = values / peak if peak > 0 else values
        return Tensor(scaled[None])

    def __call__(self, x: Tensor) -> Tensor:
        """Forward pass on a prepared ``[1, A, D]`` input; returns ``[n, n]`` in (0, 1)."""
        h = self.stem(x)
        for block in self.sino_blocks:
            h = block(h)
        h = T.resize_bilinear(h, self.image_side, self.image_side)
        for block in self.image_blocks:
            h = block(h)
        out = T.sigmoid(self.head(h))
        return T.reshape(out, (self.image_side, self.image_side))


def dip_forward(net: DipNetwork, sino) -> Tensor:
    return net(net.prepare_input(sino))
