"""Rate models: factorized prior for hyper-latents and the discretized
mean-scale Gaussian for main latents, plus their coder tables."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import ndtr

from .rangecoder import ALPHABET, RADIUS, pmf_to_cdf

LIKELIHOOD_FLOOR = 2.0 ** -16
SIGMA_MIN = 0.01


def _std_normal_cdf(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-x / math.sqrt(2.0))


def gaussian_likelihood(y: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Probability mass of the unit-width bin around ``y``, floored at 2^-16."""
    sigma = sigma.clamp_min(SIGMA_MIN)
    d = (y - mu).abs()
    # evaluate on the lower tail for precision
    p = _std_normal_cdf((0.5 - d) / sigma) - _std_normal_cdf((-0.5 - d) / sigma)
    return p.clamp_min(LIKELIHOOD_FLOOR)


def gaussian_bits(y, mu, sigma) -> torch.Tensor:
    """Per-element bits."""
    return -torch.log2(gaussian_likelihood(y, mu, sigma))


def rate_gaussian(y, mu, sigma) -> torch.Tensor:
    return gaussian_bits(y, mu, sigma).sum()


def scale_from_raw(raw: torch.Tensor) -> torch.Tensor:
    return F.softplus(raw).clamp_min(SIGMA_MIN)


def gaussian_cdf_tables(sigma: np.ndarray) -> np.ndarray:
    """cdf rows over the escape alphabet for zero-mean Gaussians."""
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64).reshape(-1), SIGMA_MIN)[:, None]
    edges = np.arange(-RADIUS - 0.5, RADIUS + 1.0, 1.0)[None, :]
    c = ndtr(edges / sigma)
    core = np.diff(c, axis=1)
    pmf = np.concatenate([c[:, :1], core, 1.0 - c[:, -1:]], axis=1)
    assert pmf.shape[1] == ALPHABET
    return pmf_to_cdf(pmf)


class FactorizedPrior(nn.Module):
    """Per-channel learned univariate density with a monotone cumulative.

    The cumulative c(x) is a sigmoid of a small monotone network; the
    likelihood of a unit bin is c(x + 1/2) - c(x - 1/2).
    """

    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1, *filters, 1)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(filters) + 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nn.Parameter(torch.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nn.Parameter(torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)))
            if i < len(filters):
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def _logits_cumulative(self, x: torch.Tensor) -> torch.Tensor:
        # x: C x 1 x N
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.matmul(F.softplus(m), x) + b
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i]) * torch.tanh(x)
        return x

    def _per_channel(self, z: torch.Tensor) -> torch.Tensor:
        n, c = z.shape[:2]
        return z.transpose(0, 1).reshape(c, 1, -1)

    def _back(self, v: torch.Tensor, shape) -> torch.Tensor:
        n, c = shape[:2]
        return v.reshape(c, n, *shape[2:]).transpose(0, 1)

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """Cumulative of the underlying density, x shaped N x C x ..."""
        return self._back(torch.sigmoid(self._logits_cumulative(self._per_channel(x))), x.shape)

    def likelihood(self, z: torch.Tensor) -> torch.Tensor:
        v = self._per_channel(z)
        lower = self._logits_cumulative(v - 0.5)
        upper = self._logits_cumulative(v + 0.5)
        sign = -torch.sign(lower + upper).detach()
        p = (torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower)).abs()
        return self._back(p, z.shape).clamp_min(LIKELIHOOD_FLOOR)

    def bits(self, z: torch.Tensor) -> torch.Tensor:
        return -torch.log2(self.likelihood(z))

    def rate(self, z: torch.Tensor) -> torch.Tensor:
        return self.bits(z).sum()

    @torch.no_grad()
    def cdf_tables(self) -> np.ndarray:
        """One cdf row per channel over the escape alphabet."""
        edges = torch.arange(-RADIUS - 0.5, RADIUS + 1.0, 1.0, dtype=torch.float32)
        x = edges.view(1, 1, -1).expand(self.channels, 1, -1).contiguous()
        c = torch.sigmoid(self._logits_cumulative(x)).reshape(self.channels, -1).double().numpy()
        core = np.diff(c, axis=1)
        pmf = np.concatenate([c[:, :1], core, 1.0 - c[:, -1:]], axis=1)
        return pmf_to_cdf(pmf)


def rate_factorized(prior: FactorizedPrior, z: torch.Tensor) -> torch.Tensor:
    return prior.rate(z)
