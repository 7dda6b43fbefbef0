"""Fixed, exactly invertible image <-> token codec.

Images in [0, 1] are mapped to [-1, 1] (x -> 2x - 1) and cut into
non-overlapping p x p patches; each patch is flattened row-major as
(py, px, channel) into a d_patch = 3 * p**2 vector. Tokens are ordered
row-major over the patch grid. Both directions are affine, so the pair is
exactly invertible and trivially differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class LatentShapeError(ValueError):
    pass


@dataclass
class LatentGrid:
    tokens: torch.Tensor  # [n_tokens, d_patch]
    patch_size: int
    height: int
    width: int

    @property
    def n_tokens(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def d_patch(self) -> int:
        return 3 * self.patch_size ** 2

    def validate(self):
        if self.height % self.patch_size or self.width % self.patch_size:
            raise LatentShapeError(
                f"dims {self.height}x{self.width} not divisible by patch {self.patch_size}")
        if tuple(self.tokens.shape) != (self.n_tokens, self.d_patch):
            raise LatentShapeError(
                f"token shape {tuple(self.tokens.shape)} inconsistent with "
                f"{self.height}x{self.width} @ patch {self.patch_size} "
                f"(expected {(self.n_tokens, self.d_patch)})")


def _to_tensor(image, dtype) -> torch.Tensor:
    if isinstance(image, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(image))
    else:
        t = image
    return t.to(dtype)


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """[B, H, W, 3] -> [B, n_tokens, 3*p*p]."""
    b, h, w, c = images.shape
    if h % patch_size or w % patch_size:
        raise LatentShapeError(f"dims {h}x{w} not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, c)
    x = x.permute(0, 1, 3, 2, 4, 5)  # [B, gh, gw, p, p, c]
    return x.reshape(b, gh * gw, patch_size * patch_size * c)


def unpatchify(tokens: torch.Tensor, patch_size: int, height: int, width: int) -> torch.Tensor:
    """[B, n_tokens, 3*p*p] -> [B, H, W, 3]."""
    b, n, d = tokens.shape
    gh, gw = height // patch_size, width // patch_size
    if n != gh * gw or d != 3 * patch_size ** 2:
        raise LatentShapeError(
            f"token shape {(n, d)} inconsistent with {height}x{width} @ patch {patch_size}")
    x = tokens.reshape(b, gh, gw, patch_size, patch_size, 3)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, height, width, 3)


def encode_latent(image, patch_size: int = 8, dtype=torch.float32) -> LatentGrid:
    """Encode one [H, W, 3] image in [0, 1] to a LatentGrid in [-1, 1]."""
    t = _to_tensor(image, dtype)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise LatentShapeError(f"expected [H, W, 3] image, got {tuple(t.shape)}")
    h, w = int(t.shape[0]), int(t.shape[1])
    tokens = patchify((2.0 * t - 1.0).unsqueeze(0), patch_size)[0]
    grid = LatentGrid(tokens=tokens, patch_size=patch_size, height=h, width=w)
    grid.validate()
    return grid


def decode_latent(grid: LatentGrid) -> torch.Tensor:
    """Decode a LatentGrid back to an [H, W, 3] image clamped to [0, 1]."""
    grid.validate()
    img = unpatchify(grid.tokens.unsqueeze(0), grid.patch_size, grid.height, grid.width)[0]
    return ((img + 1.0) / 2.0).clamp(0.0, 1.0)


def encode_batch(images, patch_size: int = 8, dtype=torch.float32) -> torch.Tensor:
    """Encode a [B, H, W, 3] stack straight to tokens [B, n, d_patch]."""
    t = _to_tensor(images, dtype)
    if t.ndim != 4 or t.shape[-1] != 3:
        raise LatentShapeError(f"expected [B, H, W, 3] images, got {tuple(t.shape)}")
    return patchify(2.0 * t - 1.0, patch_size)


def decode_batch(tokens: torch.Tensor, patch_size: int, height: int, width: int) -> torch.Tensor:
    return ((unpatchify(tokens, patch_size, height, width) + 1.0) / 2.0).clamp(0.0, 1.0)
