"""Nearest-code vector quantization with a straight-through gradient.

Forward: every C-dimensional feature vector is replaced by its nearest code
(lowest index on ties). Backward: the encoder sees the upstream gradient
unchanged; codes are trained only through the first term of the
quantization loss.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from utils.errors import NonFiniteError, ShapeMismatchError

from .codebook import Codebook, CodebookName, InitKind

DEFAULT_BETA = 0.25

# 距离块的元素上限
_CHUNK_ELEMENTS = 1 << 24


@dataclass(frozen=True)
class FeatureMap:
    """Channel-last features (H, W, T, C); position ``p`` follows raster order over (H, W, T)."""
    data: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ShapeMismatchError(f"FeatureMap expects (H, W, T, C), got {tuple(self.data.shape)}")

    @property
    def C(self) -> int:
        return int(self.data.shape[-1])

    @property
    def positions(self) -> int:
        return int(np.prod(self.data.shape[:3]))

    def vector(self, p: int) -> torch.Tensor:
        return self.flat()[p]

    def flat(self) -> torch.Tensor:
        return self.data.reshape(-1, self.C)

    @classmethod
    def from_channel_first(cls, tensor: torch.Tensor) -> "FeatureMap":
        """(C, H, W, T) -> FeatureMap."""
        return cls(tensor.permute(1, 2, 3, 0))


@dataclass(frozen=True)
class QuantResult:
    quantized: FeatureMap
    indices: torch.Tensor
    loss: torch.Tensor


def nearest_code_indices(flat: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    """argmin_i ||flat[n] - codes[i]||, first index on ties."""
    if flat.shape[-1] != codes.shape[-1]:
        raise ShapeMismatchError(f"feature channels {flat.shape[-1]} != codebook channels {codes.shape[-1]}")
    if not torch.isfinite(flat).all():
        raise NonFiniteError("features contain non-finite values")
    if not torch.isfinite(codes).all():
        raise NonFiniteError("codebook contains non-finite values")
    step = max(1, _CHUNK_ELEMENTS // max(1, codes.shape[0] * codes.shape[1]))
    with torch.no_grad():
        chunks = []
        for start in range(0, flat.shape[0], step):
            block = flat[start:start + step]
            d2 = ((block[:, None, :] - codes[None, :, :]) ** 2).sum(dim=-1)
            chunks.append(torch.argmin(d2, dim=1))
    return torch.cat(chunks) if chunks else torch.zeros(0, dtype=torch.long, device=flat.device)


def quant_loss(features: torch.Tensor, quantized: torch.Tensor, beta: float = DEFAULT_BETA) -> torch.Tensor:
    """Σ_p ||sg(f_p) - z_p||² + β ||f_p - sg(z_p)||²."""
    if features.shape != quantized.shape:
        raise ShapeMismatchError(f"features {tuple(features.shape)} vs quantized {tuple(quantized.shape)}")
    codebook_term = ((features.detach() - quantized) ** 2).sum()
    commitment_term = ((features - quantized.detach()) ** 2).sum()
    return codebook_term + beta * commitment_term


def straight_through_backward(upstream_grad_wrt_z: torch.Tensor) -> torch.Tensor:
    """∂z/∂E := I."""
    return upstream_grad_wrt_z.clone()


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, features, quantized):
        if features.shape != quantized.shape:
            raise ShapeMismatchError(f"features {tuple(features.shape)} vs quantized {tuple(quantized.shape)}")
        return quantized.detach().clone()

    @staticmethod
    def backward(ctx, grad_output):
        return straight_through_backward(grad_output), None


def straight_through(features: torch.Tensor, quantized: torch.Tensor) -> torch.Tensor:
    """Forward value of ``quantized``, gradient of the identity into ``features`` only."""
    return _StraightThrough.apply(features, quantized)


def quantize(features: Union[FeatureMap, torch.Tensor], codebook: Union[Codebook, torch.Tensor],
             beta: float = DEFAULT_BETA) -> QuantResult:
    fmap = features if isinstance(features, FeatureMap) else FeatureMap(features)
    codes = codebook if isinstance(codebook, torch.Tensor) else torch.as_tensor(
        np.array(codebook.codes), dtype=fmap.data.dtype, device=fmap.data.device)
    flat = fmap.flat()
    indices = nearest_code_indices(flat, codes)
    chosen = codes[indices]
    loss = quant_loss(flat, chosen, beta)
    return QuantResult(
        quantized=FeatureMap(chosen.reshape(fmap.data.shape)),
        indices=indices.reshape(fmap.data.shape[:3]),
        loss=loss,
    )


class VectorQuantizer(nn.Module):
    """Quantizer layer over channel-first tensors (B, C, ...), owning a trainable codebook."""

    def __init__(self, num_codes: int, dim: int, *, name: CodebookName = CodebookName.Vanilla,
                 beta: float = DEFAULT_BETA):
        super().__init__()
        self.name = CodebookName(name)
        self.beta = beta
        self.init_kind = InitKind.Random
        self.codebook = nn.Parameter(torch.empty(num_codes, dim).uniform_(-1.0 / num_codes, 1.0 / num_codes))
        self.register_buffer("usage_counts", torch.zeros(num_codes, dtype=torch.long), persistent=False)

    @property
    def num_codes(self) -> int:
        return int(self.codebook.shape[0])

    @property
    def dim(self) -> int:
        return int(self.codebook.shape[1])

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]:
        if x.shape[1] != self.dim:
            raise ShapeMismatchError(f"{self.name.value} quantizer expects {self.dim} channels, got {x.shape[1]}")
        batch = x.shape[0]
        channel_last = x.movedim(1, -1)
        flat = channel_last.reshape(-1, self.dim)
        indices = nearest_code_indices(flat, self.codebook)
        chosen = self.codebook[indices]
        # Σ_p 按单幅图像求和，再对 batch 取平均
        loss = quant_loss(flat, chosen, self.beta) / batch
        z = straight_through(flat, chosen).reshape(channel_last.shape).movedim(-1, 1)
        if self.training:
            self.usage_counts += torch.bincount(indices, minlength=self.num_codes)
        return z, loss, indices.reshape(channel_last.shape[:-1])

    def reset_usage(self):
        self.usage_counts.zero_()

    def usage_histogram(self) -> np.ndarray:
        return self.usage_counts.detach().cpu().numpy().copy()

    def load_codebook(self, codebook: Codebook):
        if (codebook.K, codebook.C) != (self.num_codes, self.dim):
            raise ShapeMismatchError(
                f"codebook {codebook.K}x{codebook.C} does not fit {self.name.value} quantizer {self.num_codes}x{self.dim}")
        with torch.no_grad():
            self.codebook.copy_(torch.as_tensor(np.array(codebook.codes), dtype=self.codebook.dtype))
        self.init_kind = codebook.init_kind

    def to_codebook(self) -> Codebook:
        return Codebook(self.codebook.detach().cpu().double().numpy(), self.init_kind, self.name)


class IdentityQuantizer(nn.Module):
    """Stand-in for a disabled quantizer: passes features through with zero loss."""

    def __init__(self, name: CodebookName):
        super().__init__()
        self.name = CodebookName(name)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]:
        return x, x.new_zeros(()), None


def usage_perplexity(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))
