"""Architecture descriptions and the small text grammar the CLI accepts.

Two families:

* ``mlp:IN-H1[-H2...]-OUT`` — dense+relu hidden layers, final dense head.
* ``cnn:CxHxW:token,token,...`` — tokens are
    - ``cN``        conv with N output channels (``kK`` kernel, ``sS`` stride,
                    ``pP`` padding, trailing ``b`` adds a bias; defaults k3 s1 p0)
    - ``bn``        per-channel affine normalization
    - ``r``         relu
    - ``gap``       global average pooling
    - ``hN``        prediction head with N classes (must be last)

Example: ``cnn:1x10x10:c96k3,bn,r,c64k3,bn,r,gap,h8``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ConfigError
from .modelio import LayerSpec


@dataclass(frozen=True)
class ArchSpec:
    """Input shape, ordered layer specs (weights not yet materialized), class count."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    class_count: int


def mlp_arch(in_dim: int, hidden: list[int], classes: int) -> ArchSpec:
    layers = []
    prev = in_dim
    for i, h in enumerate(hidden, start=1):
        name = f"dense{i}"
        layers.append(LayerSpec(
            name, "dense", {"in": prev, "out": h},
            {"weight": f"{name}.weight", "bias": f"{name}.bias"},
        ))
        layers.append(LayerSpec(f"relu{i}", "relu"))
        prev = h
    layers.append(LayerSpec(
        "head", "prediction_head", {"in": prev, "classes": classes},
        {"weight": "head.weight", "bias": "head.bias"},
    ))
    return ArchSpec((in_dim,), tuple(layers), classes)


_CONV_RE = re.compile(r"^c(\d+)(?:k(\d+))?(?:s(\d+))?(?:p(\d+))?(b?)$")


def cnn_arch(input_shape: tuple[int, int, int], tokens: list[str]) -> ArchSpec:
    if len(input_shape) != 3:
        raise ConfigError(f"cnn input must be CxHxW, got {input_shape}")
    layers = []
    channels = input_shape[0]
    classes = None
    pooled = False
    conv_idx = bn_idx = relu_idx = 0
    for tok in tokens:
        if classes is not None:
            raise ConfigError("head token must be last")
        m = _CONV_RE.match(tok)
        if m:
            conv_idx += 1
            out_c, k, s, p, bias = (int(m.group(1)), int(m.group(2) or 3),
                                    int(m.group(3) or 1), int(m.group(4) or 0),
                                    bool(m.group(5)))
            name = f"conv{conv_idx}"
            weights = {"weight": f"{name}.weight"}
            if bias:
                weights["bias"] = f"{name}.bias"
            layers.append(LayerSpec(name, "conv2d", {
                "in_channels": channels, "out_channels": out_c,
                "kernel_h": k, "kernel_w": k, "stride": s, "padding": p,
            }, weights))
            channels = out_c
        elif tok == "bn":
            bn_idx += 1
            name = f"bn{bn_idx}"
            layers.append(LayerSpec(name, "batchnorm", {"channels": channels, "eps": 1e-5}, {
                "gamma": f"{name}.gamma", "beta": f"{name}.beta",
                "mean": f"{name}.mean", "var": f"{name}.var",
            }))
        elif tok == "r":
            relu_idx += 1
            layers.append(LayerSpec(f"relu{relu_idx}", "relu"))
        elif tok == "gap":
            layers.append(LayerSpec("gap", "avg_pool_global"))
            pooled = True
        elif tok.startswith("h"):
            classes = int(tok[1:])
            if not pooled:
                raise ConfigError("cnn head requires a gap token before it")
            layers.append(LayerSpec(
                "head", "prediction_head", {"in": channels, "classes": classes},
                {"weight": "head.weight", "bias": "head.bias"},
            ))
        else:
            raise ConfigError(f"unknown cnn token {tok!r}")
    if classes is None:
        raise ConfigError("cnn spec must end with a head token hN")
    return ArchSpec(tuple(input_shape), tuple(layers), classes)


def parse_arch(text: str) -> ArchSpec:
    """Parse the CLI architecture grammar described in the module docstring."""
    if text.startswith("mlp:"):
        dims = [int(p) for p in text[4:].split("-")]
        if len(dims) < 3:
            raise ConfigError(f"mlp spec needs IN-H-OUT at minimum, got {text!r}")
        return mlp_arch(dims[0], dims[1:-1], dims[-1])
    if text.startswith("cnn:"):
        parts = text[4:].split(":")
        if len(parts) != 2:
            raise ConfigError(f"cnn spec must look like cnn:CxHxW:tokens, got {text!r}")
        shape = tuple(int(p) for p in parts[0].split("x"))
        return cnn_arch(shape, parts[1].split(","))
    raise ConfigError(f"unknown architecture family in {text!r}")
