"""Encoder, mapping network, domain and identity discriminators.

Every forward method takes ``train`` explicitly; batch-norm statistics update
only when it is true.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass
class ModelConfig:
    in_channels: int = 3
    encoder_widths: tuple[int, ...] = (16, 32)
    embedding_dim: int = 64
    num_identities: int = 2
    num_domains_out: int = 2
    use_bnneck: bool = True
    disc_hidden: int = 128

    def __post_init__(self):
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if self.num_identities < 2:
            raise ValueError("num_identities must be >= 2")
        if self.num_domains_out != 2:
            raise ValueError("the domain discriminator is binary (central vs peripheral)")
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)


@dataclass
class ParamGroups:
    """Disjoint parameter sets routed to different losses."""

    theta_e: list[nn.Parameter] = field(default_factory=list)
    theta_m: list[nn.Parameter] = field(default_factory=list)
    theta_d: list[nn.Parameter] = field(default_factory=list)
    theta_i: list[nn.Parameter] = field(default_factory=list)

    @property
    def theta_f(self) -> list[nn.Parameter]:
        return self.theta_e + self.theta_m

    def items(self):
        return [("theta_e", self.theta_e), ("theta_m", self.theta_m),
                ("theta_d", self.theta_d), ("theta_i", self.theta_i)]


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DDANNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = (config.in_channels,) + config.encoder_widths
        self.encoder = nn.Sequential(*[_conv_block(a, b) for a, b in zip(widths, widths[1:])])
        # the last convolution stage plays the mapping network
        self.mapping = _conv_block(widths[-1], config.embedding_dim)
        self.domain_head = nn.Sequential(
            nn.Linear(config.embedding_dim, config.disc_hidden),
            nn.BatchNorm1d(config.disc_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(config.disc_hidden, 2),
        )
        self.neck = nn.BatchNorm1d(config.embedding_dim) if config.use_bnneck else nn.Identity()
        self.classifier = nn.Linear(config.embedding_dim, config.num_identities)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for mod in self.modules():
            if isinstance(mod, nn.Conv2d):
                fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
                nn.init.normal_(mod.weight, 0.0, math.sqrt(2.0 / fan_in))
            elif isinstance(mod, nn.Linear):
                nn.init.normal_(mod.weight, 0.0, 0.01 if mod is self.classifier else
                                math.sqrt(1.0 / mod.in_features))
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, (nn.BatchNorm1d, nn.BatchNorm2d)):
                nn.init.ones_(mod.weight)
                nn.init.zeros_(mod.bias)

    def param_groups(self) -> ParamGroups:
        return ParamGroups(
            theta_e=list(self.encoder.parameters()),
            theta_m=list(self.mapping.parameters()),
            theta_d=list(self.domain_head.parameters()),
            theta_i=list(self.neck.parameters()) + list(self.classifier.parameters()),
        )

    def encode(self, images: torch.Tensor, train: bool) -> torch.Tensor:
        """Feature map z."""
        c = self.config.in_channels
        if images.dim() != 4 or images.shape[1] != c:
            raise ValueError(f"expected N x {c} x H x W images, got {tuple(images.shape)}")
        self.encoder.train(train)
        return self.encoder(images)

    def map(self, z: torch.Tensor, train: bool) -> torch.Tensor:
        """Embedding m from a feature map (pooled output of the mapping stage)."""
        self.mapping.train(train)
        return self.mapping(z).mean(dim=(2, 3))

    def features(self, images: torch.Tensor, train: bool = False) -> torch.Tensor:
        return self.map(self.encode(images, train), train)

    def domain_logits(self, embeddings: torch.Tensor, train: bool = False) -> torch.Tensor:
        """Logits over (peripheral, central); index 1 is the central class."""
        self._check_embeddings(embeddings)
        self.domain_head.train(train)
        return self.domain_head(embeddings)

    def identity_logits(self, embeddings: torch.Tensor, train: bool = False) -> torch.Tensor:
        self._check_embeddings(embeddings)
        self.neck.train(train)
        self.classifier.train(train)
        return self.classifier(self.neck(embeddings))

    def _check_embeddings(self, m: torch.Tensor) -> None:
        if m.dim() != 2 or m.shape[1] != self.config.embedding_dim:
            raise ValueError(
                f"expected N x {self.config.embedding_dim} embeddings, got {tuple(m.shape)}")


def build_model(config: ModelConfig, seed: int = 0) -> DDANNet:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = DDANNet(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return net


@torch.no_grad()
def embed(net: DDANNet, images, batch_size: int = 256) -> torch.Tensor:
    """Eval-mode embeddings for an array of images."""
    x = torch.as_tensor(images)
    dtype = next(net.parameters()).dtype
    out = [net.features(x[i:i + batch_size].to(dtype), train=False)
           for i in range(0, len(x), batch_size)]
    return torch.cat(out) if out else torch.empty(0, net.config.embedding_dim, dtype=dtype)

