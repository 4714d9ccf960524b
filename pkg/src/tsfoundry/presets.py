"""Named configuration bundles pinning the model variants and ablation grids.

A preset is an immutable (EncoderConfig, PretrainConfig, ExtractionSpec)
triple. Grids expand one ablation axis into a list of named presets.
Presets serialize to canonical JSON; the serialization hash is stable
within a format version so runs can cite configurations by hash.
"""

from __future__ import annotations

import json
from dataclasses import replace

from .blobio import bytes_sha256, canonical_json
from .encoder import EncoderConfig
from .errors import UnknownPresetError
from .extract import ExtractionSpec, SelfEnsembleSpec
from .pretrain import PretrainConfig, encoder_config_to_dict
from .tokenizer import TokenizerConfig

PRESET_FORMAT_VERSION = 1

_V1_AXES = dict(pos_encoding="sinusoidal", norm="layer_norm", ffn="gelu")
_V2_AXES = dict(pos_encoding="rope", norm="rms_norm", ffn="swiglu")


def _full(kernel, head_dim, axes):
    return EncoderConfig(
        tokenizer=TokenizerConfig(conv_kernel=kernel),
        num_layers=6,
        num_heads=8,
        head_dim=head_dim,
        resize_length=512,
        **axes,
    )


def _toy_encoder():
    return EncoderConfig(
        tokenizer=TokenizerConfig(
            num_tokens=32,
            token_dim=64,
            conv_kernel=9,
            conv_channels=32,
            scalar_scales=(1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3),
            scalar_embed_dim=4,
        ),
        num_layers=2,
        num_heads=4,
        head_dim=16,
        pos_encoding="sinusoidal",
        norm="layer_norm",
        ffn="gelu",
        resize_length=512,
    )


def _build_registry():
    full_pretrain = PretrainConfig(batch_size=256, epochs=100, projector_dim=128)
    toy_pretrain = PretrainConfig(batch_size=64, epochs=20, projector_dim=64, tracking_every=5)
    extract_full = ExtractionSpec(layer=3, aggregation="cls_mean_concat", resize_length=512)
    registry = {
        "mantis-plus": (_full(17, 128, _V1_AXES), full_pretrain, extract_full),
        "mantis-v2": (_full(41, 32, _V2_AXES), full_pretrain, extract_full),
        "mantis-v2-se": (
            _full(41, 32, _V2_AXES),
            full_pretrain,
            replace(
                extract_full,
                self_ensemble=SelfEnsembleSpec((128, 256, 512, 1024), True),
            ),
        ),
        # desk-scale preset for tests and demos, not a paper variant
        "toy-2layer": (
            _toy_encoder(),
            toy_pretrain,
            ExtractionSpec(layer=2, aggregation="cls_mean_concat", resize_length=512),
        ),
    }
    return registry


_REGISTRY = _build_registry()


def preset_names():
    return sorted(_REGISTRY)


def get_preset(name: str):
    """(EncoderConfig, PretrainConfig, ExtractionSpec) for a registered name."""
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r}; valid names: {', '.join(preset_names())}"
        ) from None


# -- ablation grids -----------------------------------------------------------------

KERNEL_SIZES = (9, 17, 25, 33, 41, 49)
HEAD_DIMS = (32, 64, 128, 256)

TRANSFORMER_VARIANTS = {
    # (activations/norm family, positional encoding)
    "a-classic-sinusoidal": dict(pos_encoding="sinusoidal", norm="layer_norm", ffn="gelu"),
    "b-swiglu-rms-nopos": dict(pos_encoding="none", norm="rms_norm", ffn="swiglu"),
    "c-swiglu-rms-sinusoidal": dict(pos_encoding="sinusoidal", norm="rms_norm", ffn="swiglu"),
    "d-classic-rope": dict(pos_encoding="rope", norm="layer_norm", ffn="gelu"),
    "e-swiglu-rms-rope": dict(pos_encoding="rope", norm="rms_norm", ffn="swiglu"),
}

TOKENIZER_VARIANTS = {
    "signal-only": dict(use_diff_branch=False, use_stats_branch=False),
    "signal+stats": dict(use_diff_branch=False, use_stats_branch=True),
    "dup-signal+stats": dict(
        use_diff_branch=False, use_stats_branch=True, duplicate_signal_branch=True
    ),
    "signal+diff": dict(use_diff_branch=True, use_stats_branch=False),
    "all-patch-embed": dict(patch_embed=True),
    "all-max-pool": dict(pooling="max"),
    "all-three": dict(),
}


def get_grid(axis: str, base: str = "toy-2layer"):
    """Named (variant, (encoder, pretrain, extract)) list for one axis."""
    encoder, pre, spec = get_preset(base)
    if axis == "kernel":
        return [
            (f"kernel-{k}", (replace(encoder, tokenizer=replace(encoder.tokenizer, conv_kernel=k)), pre, spec))
            for k in KERNEL_SIZES
        ]
    if axis == "headdim":
        return [
            (f"headdim-{h}", (replace(encoder, head_dim=h), pre, spec))
            for h in HEAD_DIMS
        ]
    if axis == "variant":
        return [
            (name, (replace(encoder, **axes), pre, spec))
            for name, axes in TRANSFORMER_VARIANTS.items()
        ]
    if axis == "tokenizer":
        return [
            (name, (replace(encoder, tokenizer=replace(encoder.tokenizer, **flags)), pre, spec))
            for name, flags in TOKENIZER_VARIANTS.items()
        ]
    raise UnknownPresetError(
        f"unknown grid axis {axis!r}; valid: kernel, headdim, variant, tokenizer"
    )


# -- serialization ------------------------------------------------------------------


def preset_to_dict(name: str) -> dict:
    encoder, pre, spec = get_preset(name)
    return {
        "format_version": PRESET_FORMAT_VERSION,
        "name": name,
        "encoder": encoder_config_to_dict(encoder),
        "pretrain": {
            "batch_size": pre.batch_size,
            "epochs": pre.epochs,
            "temperature": pre.temperature,
            "crop_max": pre.crop_max,
            "projector_dim": pre.projector_dim,
            "lr": pre.lr,
            "weight_decay": pre.weight_decay,
            "tracking_every": pre.tracking_every,
            "seed": pre.seed,
        },
        "extraction": spec.to_dict(),
    }


def preset_json(name: str) -> str:
    return json.dumps(preset_to_dict(name), sort_keys=True, indent=1)


def preset_hash(name: str) -> str:
    return bytes_sha256(canonical_json(preset_to_dict(name)))
