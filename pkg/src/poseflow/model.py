"""Shared multi-branch transformer velocity network with switchable low-rank
adapter sets on the condition branch.

The token sequence is the concatenation [text | condition | noise]. Each
block computes per-branch Q/K/V projections, runs one unified softmax
attention over the whole sequence, applies a per-branch output projection,
and a shared feed-forward. The timestep enters through a sinusoidal embedding
that drives adaptive layer-norm modulation (shift/scale/gate, zero-initialized)
in every block.

Two adapter sets, "skeletal" and "appearance", hold low-rank A/B factors for
the condition-branch Q/K/V of every block. A is Gaussian at init, B is zero,
so a fresh adapter is a no-op and the two stages start from the same shared
backbone. Text and noise branches never see adapter updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .latent import LatentGrid, LatentShapeError

ADAPTER_NAMES = ("skeletal", "appearance")
BRANCHES = ("text", "condition", "noise")
PROJECTIONS = ("q", "k", "v")


class UnknownAdapterError(ValueError):
    pass


class BranchContractError(ValueError):
    """Raised when the adapter path is applied outside the condition branch."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_blocks: int = 4
    lora_rank: int = 4
    lora_scale: float = 1.0
    text_vocab_size: int = 10
    max_text_len: int = 4
    patch_size: int = 8
    image_size: int = 64
    noise_dim: Optional[int] = None  # defaults to d_patch; doubled for the implicit baseline
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_patch(self) -> int:
        return 3 * self.patch_size ** 2

    @property
    def effective_noise_dim(self) -> int:
        return self.noise_dim if self.noise_dim is not None else self.d_patch

    @property
    def grid_tokens(self) -> int:
        g = self.image_size // self.patch_size
        return g * g

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model, "n_heads": self.n_heads, "n_blocks": self.n_blocks,
            "lora_rank": self.lora_rank, "lora_scale": self.lora_scale,
            "text_vocab_size": self.text_vocab_size, "max_text_len": self.max_text_len,
            "patch_size": self.patch_size, "image_size": self.image_size,
            "noise_dim": self.noise_dim, "seed": self.seed,
        }


@dataclass
class TokenSequence:
    """Branch-tagged token sequence; concatenation order is [text|cond|noise]."""
    text: torch.Tensor       # [B, Lt, d]
    condition: torch.Tensor  # [B, Lc, d] (Lc may be 0)
    noise: torch.Tensor      # [B, Ln, d]

    def concat(self) -> torch.Tensor:
        return torch.cat([self.text, self.condition, self.noise], dim=1)

    @property
    def lengths(self) -> tuple[int, int, int]:
        return (self.text.shape[1], self.condition.shape[1], self.noise.shape[1])


class AdapterSet(nn.Module):
    """One named set of per-block, per-projection low-rank factors."""

    def __init__(self, name: str, n_blocks: int, d_model: int, rank: int,
                 generator: torch.Generator):
        super().__init__()
        if name not in ADAPTER_NAMES:
            raise UnknownAdapterError(f"unknown adapter {name!r}; expected one of {ADAPTER_NAMES}")
        self.adapter_name = name
        self.rank = rank
        factors = {}
        for b in range(n_blocks):
            for proj in PROJECTIONS:
                a = torch.empty(rank, d_model)
                a.normal_(0.0, 0.02, generator=generator)
                factors[f"b{b}_{proj}_A"] = nn.Parameter(a)
                factors[f"b{b}_{proj}_B"] = nn.Parameter(torch.zeros(d_model, rank))
        self.factors = nn.ParameterDict(factors)

    def pair(self, block: int, proj: str) -> tuple[torch.Tensor, torch.Tensor]:
        return self.factors[f"b{block}_{proj}_A"], self.factors[f"b{block}_{proj}_B"]


class _Block(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.proj = nn.ModuleDict({
            branch: nn.ModuleDict({
                "q": nn.Linear(d_model, d_model),
                "k": nn.Linear(d_model, d_model),
                "v": nn.Linear(d_model, d_model),
                "o": nn.Linear(d_model, d_model),
            })
            for branch in BRANCHES
        })
        self.ff = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )
        # shift/scale/gate for attention and feed-forward, zero at init
        self.ada = nn.Linear(d_model, 6 * d_model)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of t in [0, 1] (scaled by 1000), shape [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * 1000.0 * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class VelocityModel(nn.Module):
    """u(x_t, t, conditions): predicts the transport velocity for the noisy
    token grid given text tokens and an optional condition token grid."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model

        self.text_embed = nn.Embedding(config.text_vocab_size, d)
        self.text_pos = nn.Parameter(torch.zeros(config.max_text_len, d))
        self.cond_in = nn.Linear(config.d_patch, d)
        self.noise_in = nn.Linear(config.effective_noise_dim, d)
        self.pos_2d = nn.Parameter(torch.zeros(config.grid_tokens, d))

        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList(
            [_Block(d, config.n_heads) for _ in range(config.n_blocks)])

        self.norm_final = nn.LayerNorm(d, elementwise_affine=False)
        self.ada_final = nn.Linear(d, 2 * d)
        self.out = nn.Linear(d, config.effective_noise_dim)
        nn.init.zeros_(self.ada_final.weight)
        nn.init.zeros_(self.ada_final.bias)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

        g = torch.Generator().manual_seed(config.seed)
        self._init_weights(g)
        self.adapters = nn.ModuleDict({
            name: AdapterSet(name, config.n_blocks, d, config.lora_rank, g)
            for name in ADAPTER_NAMES
        })
        self._active = "skeletal"

    def _init_weights(self, g: torch.Generator):
        for name, p in self.named_parameters():
            if name.startswith(("ada_final", "out")) or ".ada." in name:
                continue  # keep zero inits
            if p.dim() >= 2:
                p.data = torch.randn(p.shape, generator=g) * 0.02
            else:
                p.data.zero_()
        self.pos_2d.data = torch.randn(self.pos_2d.shape, generator=g) * 0.02
        self.text_pos.data = torch.randn(self.text_pos.shape, generator=g) * 0.02

    # ------------------------------------------------------------------
    # adapter management
    # ------------------------------------------------------------------

    def set_active_adapter(self, name: str):
        if name not in ADAPTER_NAMES:
            raise UnknownAdapterError(f"unknown adapter {name!r}; expected one of {ADAPTER_NAMES}")
        self._active = name

    @property
    def active_adapter(self) -> str:
        return self._active

    def adapter_params(self, name: str) -> dict:
        if name not in ADAPTER_NAMES:
            raise UnknownAdapterError(f"unknown adapter {name!r}; expected one of {ADAPTER_NAMES}")
        prefix = f"adapters.{name}."
        return {n: p for n, p in self.named_parameters() if n.startswith(prefix)}

    def backbone_params(self) -> dict:
        return {n: p for n, p in self.named_parameters() if not n.startswith("adapters.")}

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # ------------------------------------------------------------------
    # projections and attention
    # ------------------------------------------------------------------

    def lora_project(self, x: torch.Tensor, proj: str, block: int,
                     adapter: Optional[str] = None, branch: str = "condition") -> torch.Tensor:
        """Condition-branch projection with the active adapter's low-rank
        update: W x + scale * B (A x)."""
        if branch != "condition":
            raise BranchContractError(
                f"adapter path applies only to condition tokens, not branch {branch!r}")
        if proj not in PROJECTIONS:
            raise ValueError(f"unknown projection {proj!r}")
        name = adapter or self._active
        if name not in ADAPTER_NAMES:
            raise UnknownAdapterError(f"unknown adapter {name!r}; expected one of {ADAPTER_NAMES}")
        base = self.blocks[block].proj["condition"][proj](x)
        a, b = self.adapters[name].pair(block, proj)
        return base + self.config.lora_scale * ((x @ a.t()) @ b.t())

    def base_project(self, x: torch.Tensor, branch: str, proj: str, block: int) -> torch.Tensor:
        return self.blocks[block].proj[branch][proj](x)

    def _qkv(self, seq: TokenSequence, block: int, adapter: str):
        parts = {"q": [], "k": [], "v": []}
        for branch in BRANCHES:
            x = getattr(seq, branch)
            if x.shape[1] == 0:
                for proj in PROJECTIONS:
                    parts[proj].append(x)
                continue
            for proj in PROJECTIONS:
                if branch == "condition":
                    parts[proj].append(self.lora_project(x, proj, block, adapter))
                else:
                    parts[proj].append(self.base_project(x, branch, proj, block))
        return (torch.cat(parts["q"], dim=1), torch.cat(parts["k"], dim=1),
                torch.cat(parts["v"], dim=1))

    def joint_attention(self, seq: TokenSequence, block: int,
                        adapter: Optional[str] = None, return_weights: bool = False):
        """Unified multi-head attention over [text|cond|noise]; returns a
        TokenSequence of per-branch outputs (after the per-branch output
        projection), optionally with the attention weights."""
        name = adapter or self._active
        blk = self.blocks[block]
        q, k, v = self._qkv(seq, block, name)
        bsz, s, d = q.shape
        if s == 0:
            raise ValueError("attention over an empty sequence")
        h, hd = blk.n_heads, blk.head_dim

        def split(x):
            return x.view(bsz, -1, h, hd).transpose(1, 2)  # [B, H, S, hd]

        attn = torch.softmax(split(q) @ split(k).transpose(-1, -2) / math.sqrt(hd), dim=-1)
        mixed = (attn @ split(v)).transpose(1, 2).reshape(bsz, s, d)

        lt, lc, ln = seq.lengths
        out = TokenSequence(
            text=blk.proj["text"]["o"](mixed[:, :lt]) if lt else mixed[:, :lt],
            condition=blk.proj["condition"]["o"](mixed[:, lt:lt + lc]) if lc else mixed[:, lt:lt + lc],
            noise=blk.proj["noise"]["o"](mixed[:, lt + lc:]) if ln else mixed[:, lt + lc:],
        )
        if return_weights:
            return out, attn
        return out

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _modulate(self, x: torch.Tensor, norm: nn.Module, shift, scale) -> torch.Tensor:
        return norm(x) * (1.0 + scale[:, None, :]) + shift[:, None, :]

    def forward_tokens(self, noisy: torch.Tensor, t: torch.Tensor,
                       cond: Optional[torch.Tensor], text_ids: torch.Tensor,
                       adapter: Optional[str] = None) -> torch.Tensor:
        """Batched core forward: noisy [B, n, noise_dim], t [B] in [0, 1],
        cond [B, n, d_patch] or None, text_ids [B, L]."""
        name = adapter or self._active
        if name not in ADAPTER_NAMES:
            raise UnknownAdapterError(f"unknown adapter {name!r}; expected one of {ADAPTER_NAMES}")
        cfg = self.config
        bsz, n, dn = noisy.shape
        if dn != cfg.effective_noise_dim:
            raise LatentShapeError(
                f"noisy token dim {dn} != configured noise dim {cfg.effective_noise_dim}")
        if n != cfg.grid_tokens:
            raise LatentShapeError(f"noisy grid has {n} tokens, expected {cfg.grid_tokens}")
        if cond is not None:
            if cond.shape[0] != bsz or cond.shape[1] != cfg.grid_tokens \
                    or cond.shape[2] != cfg.d_patch:
                raise LatentShapeError(
                    f"cond tokens {tuple(cond.shape)} incompatible with "
                    f"[{bsz}, {cfg.grid_tokens}, {cfg.d_patch}]")
        if not torch.isfinite(t).all():
            raise ValueError("timestep t must be finite")

        temb = self.t_mlp(timestep_embedding(t.to(noisy.dtype), cfg.d_model))

        text = self.text_embed(text_ids) + self.text_pos[None, :text_ids.shape[1], :]
        noise_tok = self.noise_in(noisy) + self.pos_2d[None, :, :]
        if cond is not None:
            cond_tok = self.cond_in(cond) + self.pos_2d[None, :, :]
        else:
            cond_tok = noise_tok.new_zeros(bsz, 0, cfg.d_model)

        seq = TokenSequence(text=text, condition=cond_tok, noise=noise_tok)
        x = seq.concat()
        lt, lc, _ = seq.lengths

        for bi, blk in enumerate(self.blocks):
            s1, sc1, g1, s2, sc2, g2 = blk.ada(torch.nn.functional.silu(temb)).chunk(6, dim=-1)
            h = self._modulate(x, blk.norm1, s1, sc1)
            hseq = TokenSequence(text=h[:, :lt], condition=h[:, lt:lt + lc],
                                 noise=h[:, lt + lc:])
            attn_out = self.joint_attention(hseq, bi, name)
            x = x + g1[:, None, :] * attn_out.concat()
            h2 = self._modulate(x, blk.norm2, s2, sc2)
            x = x + g2[:, None, :] * blk.ff(h2)

        sf, scf = self.ada_final(torch.nn.functional.silu(temb)).chunk(2, dim=-1)
        noise_out = self._modulate(x[:, lt + lc:], self.norm_final, sf, scf)
        return self.out(noise_out)

    def forward_velocity(self, noisy: LatentGrid, t: float,
                         cond: Optional[LatentGrid], text_ids,
                         adapter: Optional[str] = None) -> LatentGrid:
        """Single-sample wrapper over forward_tokens; returns a LatentGrid of
        the same shape as `noisy`."""
        noisy.validate()
        if cond is not None:
            cond.validate()
        ids = torch.as_tensor(text_ids, dtype=torch.long).reshape(1, -1)
        t_t = torch.as_tensor([float(t)], dtype=noisy.tokens.dtype)
        out = self.forward_tokens(
            noisy.tokens.unsqueeze(0), t_t,
            None if cond is None else cond.tokens.unsqueeze(0),
            ids, adapter)
        return LatentGrid(tokens=out[0], patch_size=noisy.patch_size,
                          height=noisy.height, width=noisy.width)

    # ------------------------------------------------------------------
    # test / verification helpers
    # ------------------------------------------------------------------

    @torch.no_grad()
    def randomize_parameters(self, seed: int, std: float = 0.05,
                             include_adapter_b: bool = False):
        """Perturb all parameters with seeded Gaussian noise to obtain a
        'trained-like' generic point (zero-init gates and output become live).
        Adapter B factors stay zero unless include_adapter_b is set."""
        g = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if not include_adapter_b and name.startswith("adapters.") and name.endswith("_B"):
                continue
            p.add_(torch.randn(p.shape, generator=g).to(p.dtype) * std)
