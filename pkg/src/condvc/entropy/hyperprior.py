"""Hyperprior side channel wrapped around the quadtree Gaussian model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..quant import QuantMode, quantize, uniform_noise
from .bitstream import pack_streams, unpack_streams
from .models import FactorizedPrior
from .quadtree import QuadtreeEntropyModel
from .rangecoder import RangeDecoder, RangeEncoder, decode_values, encode_values


@dataclass
class EntropyResult:
    y_hat: torch.Tensor
    z_hat: torch.Tensor
    bits_y: torch.Tensor
    bits_z: torch.Tensor
    payload: bytes | None = None

    @property
    def total_bits(self) -> torch.Tensor:
        return self.bits_y.sum() + self.bits_z.sum()


def _conv(cin, cout, k, stride=1):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


def _deconv(cin, cout, k=5):
    return nn.ConvTranspose2d(cin, cout, k, stride=2, padding=k // 2, output_padding=1)


class HyperpriorEntropy(nn.Module):
    """Codes a main latent y with a factorized hyper-latent z (stride 4
    relative to y) and a quadtree mean-scale model for y."""

    def __init__(
        self,
        latent_ch: int,
        hyper_latent_ch: int = 64,
        hidden: int = 64,
        temporal_ch: int = 0,
        use_context: bool = True,
    ):
        super().__init__()
        self.latent_ch = latent_ch
        self.hyper_latent_ch = hyper_latent_ch
        act = lambda: nn.LeakyReLU(0.1)
        self.hyper_a = nn.Sequential(
            _conv(latent_ch, hidden, 3), act(),
            _conv(hidden, hidden, 5, 2), act(),
            _conv(hidden, hyper_latent_ch, 5, 2),
        )
        self.hyper_s = nn.Sequential(
            _deconv(hyper_latent_ch, hidden), act(),
            _deconv(hidden, hidden), act(),
            _conv(hidden, hidden, 3),
        )
        self.prior = FactorizedPrior(hyper_latent_ch)
        self.gaussian = QuadtreeEntropyModel(latent_ch, hidden, temporal_ch, hidden=hidden, use_context=use_context)

    def _z_tables(self, z_shape) -> np.ndarray:
        tables = self.prior.cdf_tables()
        n, c, h, w = z_shape
        channel = np.broadcast_to(np.arange(c)[None, :, None, None], z_shape).reshape(-1)
        return tables[channel]

    def forward(
        self,
        y: torch.Tensor,
        temporal_ctx: torch.Tensor | None = None,
        mode: QuantMode | str = QuantMode.ROUND_STE,
        code: bool = False,
    ) -> EntropyResult:
        mode = QuantMode(mode)
        z = self.hyper_a(y)
        z_hat = quantize(z, mode, self.training)
        z_rate_in = uniform_noise(z) if self.training and mode is QuantMode.ROUND_STE else z_hat
        bits_z = self.prior.bits(z_rate_in)
        hyper_ctx = self.hyper_s(z_hat)
        if not code:
            bits_y, y_hat = self.gaussian(y, hyper_ctx, temporal_ctx, mode)
            return EntropyResult(y_hat, z_hat, bits_y, bits_z)
        if self.training:
            raise RuntimeError("entropy coding requires eval mode")
        enc_z = RangeEncoder()
        encode_values(enc_z, z_hat.to(torch.int64).reshape(-1).tolist(), self._z_tables(z_hat.shape))
        enc_y = RangeEncoder()
        bits_y, y_hat = self.gaussian(y, hyper_ctx, temporal_ctx, mode, encoder=enc_y)
        payload = pack_streams(enc_z.finish(), enc_y.finish())
        return EntropyResult(y_hat, z_hat, bits_y, bits_z, payload)

    @torch.no_grad()
    def decode(self, payload: bytes, latent_hw: tuple[int, int], temporal_ctx: torch.Tensor | None = None, n: int = 1):
        z_stream, y_stream = unpack_streams(payload, 2)
        h, w = latent_hw
        z_shape = (n, self.hyper_latent_ch, h // 4, w // 4)
        z_vals = decode_values(RangeDecoder(z_stream), self._z_tables(z_shape))
        z_hat = torch.tensor(z_vals, dtype=torch.float32).reshape(z_shape)
        hyper_ctx = self.hyper_s(z_hat)
        y_hat = self.gaussian.decode(RangeDecoder(y_stream), hyper_ctx, temporal_ctx)
        return y_hat, z_hat
