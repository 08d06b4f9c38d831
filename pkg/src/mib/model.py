"""The composite MIB network for the E, L, C and B variants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .fusion import Fusion, FusionKind
from .gaussian import DiagonalGaussian, NoiseDraw, poe_fuse, reparameterize
from .networks import Decoder, GaussianHead, ModalityBundle, Module, UnimodalEncoder
from .objectives import Constraint, MibConfig
from .tensor import Tensor


@dataclass
class ForwardTrace:
    """Every intermediate a loss needs, for one (possibly MC-tiled) batch."""

    encodings: dict[str, Tensor] = field(default_factory=dict)
    unimodal_inputs: dict[str, Tensor] = field(default_factory=dict)
    unimodal_posteriors: dict[str, DiagonalGaussian] = field(default_factory=dict)
    unimodal_latents: dict[str, Tensor] = field(default_factory=dict)
    unimodal_predictions: dict[str, Tensor] = field(default_factory=dict)
    fused: Tensor | None = None
    posterior: DiagonalGaussian | None = None
    latent: Tensor | None = None
    prediction: Tensor | None = None


class MIBModel(Module):
    """Per-modality encoders, optional unimodal heads/decoders, fusion, head and decoder.

    Construction draws from ``rng`` in a fixed order (encoders, unimodal
    stage, fusion, multimodal head, decoder, constraint adapters) so a seed
    fully determines the initial parameters.
    """

    def __init__(self, config: MibConfig, input_dims: Mapping[str, int], seed: int = 0):
        self.config = config
        self.input_dims = {m: int(input_dims[m]) for m in config.modalities}
        rng = np.random.default_rng(seed)
        cfg = config

        self.encoders = {
            m: UnimodalEncoder(self.input_dims[m], cfg.hidden, cfg.d_enc, f"enc_{m}", rng)
            for m in cfg.modalities
        }
        self.unimodal_heads: dict[str, GaussianHead] = {}
        self.unimodal_decoders: dict[str, Decoder] = {}
        if cfg.has_unimodal_stage:
            for m in cfg.modalities:
                self.unimodal_heads[m] = GaussianHead(cfg.d_enc, cfg.d_z, f"uhead_{m}", rng)
                self.unimodal_decoders[m] = Decoder(
                    cfg.d_z, cfg.hidden, cfg.task, f"udec_{m}", rng, cfg.n_classes)
        branch_dim = cfg.d_z if cfg.has_unimodal_stage else cfg.d_enc

        self.fusion = None
        if cfg.fusion == FusionKind.POE:
            fused_dim = cfg.d_z
        else:
            self.fusion = Fusion(cfg.fusion, [branch_dim] * len(cfg.modalities), cfg.d_enc,
                                 "fusion", rng)
            fused_dim = self.fusion.out_dim
        self.fused_dim = fused_dim

        self.head = GaussianHead(fused_dim, cfg.d_z, "head", rng) if cfg.has_multimodal_head else None
        dec_in = cfg.d_z if self.head is not None else fused_dim
        self.decoder = Decoder(dec_in, cfg.hidden, cfg.task, "dec", rng, cfg.n_classes)

        # frozen random maps used by the alternative constraints when dims differ
        self.adapters: dict[str, np.ndarray] = {}
        if cfg.constraint != Constraint.KL:
            sites = {m: cfg.d_enc for m in self.unimodal_heads}
            if self.head is not None:
                sites["fused"] = fused_dim
            for site, d_in in sites.items():
                if d_in != cfg.d_z:
                    self.adapters[site] = rng.standard_normal((d_in, cfg.d_z)) / np.sqrt(d_in)

    # ------------------------------------------------------------------
    def forward(self, bundle: ModalityBundle, rng: np.random.Generator | None = None,
                mc_samples: int = 1) -> ForwardTrace:
        """Run the variant's pipeline.  ``rng=None`` uses z = mean at every site.

        With ``mc_samples`` > 1 the batch is tiled block-wise so that each
        example gets that many independent noise draws.
        """
        cfg = self.config
        trace = ForwardTrace()
        reps = mc_samples if rng is not None else 1
        for m in cfg.modalities:
            U = bundle[m]
            if U.shape[-1] != self.input_dims[m]:
                raise ConfigurationError(
                    f"modality {m!r} has dim {U.shape[-1]}, model expects {self.input_dims[m]}")
            trace.encodings[m] = T.tile_rows(self.encoders[m](U), reps)

        branches = []
        for m in cfg.modalities:
            x_m = trace.encodings[m]
            if m in self.unimodal_heads:
                g = self.unimodal_heads[m](x_m)
                z_m = self._sample(g, rng)
                trace.unimodal_inputs[m] = x_m
                trace.unimodal_posteriors[m] = g
                trace.unimodal_latents[m] = z_m
                trace.unimodal_predictions[m] = self.unimodal_decoders[m](z_m)
                branches.append(z_m)
            else:
                branches.append(x_m)

        if cfg.fusion == FusionKind.POE:
            fused_g = poe_fuse([trace.unimodal_posteriors[m] for m in cfg.modalities])
            x = self._sample(fused_g, rng)
        else:
            x = self.fusion(branches)

        if self.head is not None:
            trace.fused = x
            trace.posterior = self.head(x)
            trace.latent = self._sample(trace.posterior, rng)
        else:
            trace.latent = x
        trace.prediction = self.decoder(trace.latent)
        return trace

    @staticmethod
    def _sample(g: DiagonalGaussian, rng) -> Tensor:
        if rng is None:
            return g.mean
        return reparameterize(g, NoiseDraw.sample(g.mean.shape, rng))

    def predict(self, bundle: ModalityBundle) -> np.ndarray:
        """Deterministic predictions (z = mean everywhere)."""
        return self.forward(bundle, None).prediction.data

    def embed(self, bundle: ModalityBundle) -> np.ndarray:
        """Deterministic final latent z for each example."""
        return self.forward(bundle, None).latent.data
