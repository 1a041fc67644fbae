"""Model assembly: the three parameter groups and the census report.

Groups follow the training split: theta is the refinement net, phi the
encoder-decoder, psi everything around the recurrent block (latent
squeeze, recurrent trainables, readout injection). The fixed reservoir
matrices live in the checkpoint but are never trained and are counted
separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .depthnet import (BackboneConfig, DecoderParams, EncoderParams,
                       GruInjectParams, LatentParams, ReadoutParams,
                       init_decoder, init_encoder, init_gru_inject,
                       init_latent, init_readout)
from .enhance import RefineParams, init_refine
from .recurrent import (ConvGRUParams, ReservoirParams, init_convgru,
                        init_reservoir)

RB_KINDS = ("convgru", "reservoir", "none")


@dataclass
class ModelParams:
    config: BackboneConfig
    rb_kind: str
    encoder: EncoderParams
    decoder: DecoderParams
    refine: Optional[RefineParams] = None
    latent: Optional[LatentParams] = None
    readout: Optional[ReadoutParams] = None
    reservoir: Optional[ReservoirParams] = None
    convgru: Optional[ConvGRUParams] = None
    gru_inject: Optional[GruInjectParams] = None
    min_depth: float = 0.3
    max_depth: float = 10.0
    # JSON-able record of the build_model call, enough to rebuild the
    # exact same tensor inventory when loading a checkpoint
    build_spec: dict = field(default_factory=dict)

    def tensors(self) -> dict:
        """Every named parameter tensor, trainable or fixed."""
        out = {}
        if self.refine is not None:
            out.update(self.refine.tensors())
        out.update(self.encoder.tensors())
        out.update(self.decoder.tensors())
        if self.latent is not None:
            out.update(self.latent.tensors())
        if self.readout is not None:
            out.update(self.readout.tensors())
        if self.reservoir is not None:
            out["reservoir.w_in"] = self.reservoir.w_in
            out["reservoir.w"] = self.reservoir.w
            out["reservoir.w_out"] = self.reservoir.w_out
        if self.convgru is not None:
            out.update(self.convgru.tensors())
        if self.gru_inject is not None:
            out.update(self.gru_inject.tensors())
        return out

    def trainable(self) -> dict:
        return {k: t for k, t in self.tensors().items() if t.requires_grad}

    def group_of(self, name: str) -> str:
        """theta / phi / psi / fixed for a named tensor."""
        if name.startswith("refine."):
            return "theta"
        if name.startswith(("encoder.", "decoder.")):
            return "phi"
        if name in ("reservoir.w_in", "reservoir.w"):
            return "fixed"
        return "psi"


def build_model(seed=0, config: BackboneConfig = None, rb: str = "reservoir",
                trefnet: bool = True, reservoir_n: int = 32,
                reservoir_out: int = 64, min_depth: float = 0.3,
                max_depth: float = 10.0, dtype=np.float32,
                reservoir_mode: str = "leaky-integrator") -> ModelParams:
    if rb not in RB_KINDS:
        raise ValueError(f"rb must be one of {RB_KINDS}, got {rb!r}")
    config = config or BackboneConfig()
    spec = {
        "seed": int(seed),
        "backbone": {"name": config.name, "channels": list(config.channels),
                     "height": config.height, "width": config.width,
                     "latent_k": config.latent_k},
        "rb": rb, "trefnet": bool(trefnet),
        "reservoir_n": reservoir_n, "reservoir_out": reservoir_out,
        "min_depth": min_depth, "max_depth": max_depth,
        "dtype": np.dtype(dtype).name, "reservoir_mode": reservoir_mode,
    }
    mp = ModelParams(
        config=config, rb_kind=rb,
        encoder=init_encoder(seed, config, dtype),
        decoder=init_decoder(seed, config, dtype),
        refine=init_refine(seed, dtype=dtype) if trefnet else None,
        min_depth=min_depth, max_depth=max_depth, build_spec=spec)
    if rb == "reservoir":
        mp.latent = init_latent(seed, config, dtype)
        mp.reservoir = init_reservoir(seed, k=config.latent_k, n=reservoir_n,
                                      out_dim=reservoir_out, dtype=dtype,
                                      mode=reservoir_mode)
        mp.readout = init_readout(seed, config, reservoir_out, dtype)
    elif rb == "convgru":
        mp.convgru = init_convgru(seed, config.bottleneck_channels, dtype)
        mp.gru_inject = init_gru_inject(seed, config, dtype)
    return mp


def rebuild_model(spec: dict) -> ModelParams:
    """build_model again from a checkpoint's stored spec."""
    return build_model(
        seed=spec["seed"], config=BackboneConfig(**spec["backbone"]),
        rb=spec["rb"], trefnet=spec["trefnet"],
        reservoir_n=spec["reservoir_n"], reservoir_out=spec["reservoir_out"],
        min_depth=spec["min_depth"], max_depth=spec["max_depth"],
        dtype=np.dtype(spec["dtype"]), reservoir_mode=spec["reservoir_mode"])


def parameter_census(params: ModelParams) -> dict:
    """Exact trainable counts per group plus the fixed reservoir weights."""
    counts = {"theta": 0, "phi": 0, "psi": 0, "fixed": 0}
    per_tensor = {}
    for name, t in params.tensors().items():
        group = params.group_of(name)
        bucket = group if t.requires_grad else "fixed"
        counts[bucket] += t.size
        per_tensor[name] = {"shape": list(t.shape), "count": t.size,
                            "trainable": bool(t.requires_grad),
                            "group": group}
    counts["total_trainable"] = counts["theta"] + counts["phi"] \
        + counts["psi"]
    return {"counts": counts, "tensors": per_tensor}


def census_compare(config: BackboneConfig = None, seed=0) -> dict:
    """psi counts of the two recurrent alternatives at one config.

    The reservoir path trains only W_out plus the latent squeeze and
    readout; ConvGRU trains three full gate convolutions plus its
    injection, so its count is strictly larger.
    """
    config = config or BackboneConfig()
    res = parameter_census(build_model(seed, config, rb="reservoir"))
    gru = parameter_census(build_model(seed, config, rb="convgru"))
    return {
        "psi_reservoir": res["counts"]["psi"],
        "psi_convgru": gru["counts"]["psi"],
        "reservoir_fixed": res["counts"]["fixed"],
        "ordering_ok": res["counts"]["psi"] < gru["counts"]["psi"],
    }
