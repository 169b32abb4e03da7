"""Flat key-value pipeline configuration.

File format: one ``key = value`` per line, ``#`` comments, blank lines
ignored. Keys are namespaced with dots; the full schema:

    train.lr, train.adam_beta1, train.adam_beta2, train.weight_decay,
    train.batch_size, train.iterations, train.lambda_v, train.lambda_j,
    train.n_events_lo, train.n_events_hi, train.seed, train.crop_size,
    train.checkpoint_every, train.coarse_supervision
    degrader.p_oe, degrader.oe_lo, degrader.oe_hi, degrader.p_mb,
    degrader.mb_frames, degrader.p_bo, degrader.bo_pixel_p,
    degrader.p_noise, degrader.noise_lo, degrader.noise_hi
    net.token_dim, net.num_blocks, net.num_heads, net.temporal_window,
    net.input_size, net.backbone_width, net.backbone_blocks1,
    net.backbone_blocks2, net.recurrent_channels, net.coord_scale
    sim.c_pos, sim.c_neg, sim.interp_factor
    eval.n_events, eval.bin_rate

Values are parsed as int, then float, then bool (true/false), else string.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .degrade import DegradationConfig
from .errors import UsageError
from .events import SimulatorConfig
from .network import NetworkConfig
from .training import TrainConfig


def parse_value(raw: str):
    raw = raw.strip()
    for caster in (int, float):
        try:
            return caster(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    return raw


def read_config_file(path: str | Path) -> dict[str, object]:
    flat: dict[str, object] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            flat[key.strip()] = parse_value(raw)
    return flat


def write_config_file(path: str | Path, flat: dict[str, object]) -> None:
    with open(path, "w") as f:
        for key in sorted(flat):
            f.write(f"{key} = {flat[key]}\n")


def _section(flat: dict[str, object], prefix: str) -> dict[str, object]:
    return {
        key[len(prefix) + 1 :]: value
        for key, value in flat.items()
        if key.startswith(prefix + ".")
    }


def _apply(instance, fields: dict[str, object], section: str):
    valid = {f.name for f in dataclasses.fields(instance)}
    unknown = set(fields) - valid
    if unknown:
        raise UsageError(f"unknown {section} config keys: {sorted(unknown)}")
    return dataclasses.replace(instance, **fields) if fields else instance


def train_config_from_flat(
    flat: dict[str, object], base: TrainConfig | None = None
) -> TrainConfig:
    base = base if base is not None else TrainConfig()
    fields = _section(flat, "train")
    lo = fields.pop("n_events_lo", base.n_events_range[0])
    hi = fields.pop("n_events_hi", base.n_events_range[1])
    fields["n_events_range"] = (int(lo), int(hi))
    return _apply(base, fields, "train")


def degradation_config_from_flat(
    flat: dict[str, object], base: DegradationConfig | None = None
) -> DegradationConfig:
    base = base if base is not None else DegradationConfig()
    fields = _section(flat, "degrader")
    oe_lo = fields.pop("oe_lo", base.oe_range[0])
    oe_hi = fields.pop("oe_hi", base.oe_range[1])
    noise_lo = fields.pop("noise_lo", base.noise_range[0])
    noise_hi = fields.pop("noise_hi", base.noise_range[1])
    fields["oe_range"] = (float(oe_lo), float(oe_hi))
    fields["noise_range"] = (float(noise_lo), float(noise_hi))
    return _apply(base, fields, "degrader")


def degradation_config_to_flat(cfg: DegradationConfig) -> dict[str, object]:
    return {
        "degrader.p_oe": cfg.p_oe,
        "degrader.oe_lo": cfg.oe_range[0],
        "degrader.oe_hi": cfg.oe_range[1],
        "degrader.p_mb": cfg.p_mb,
        "degrader.mb_frames": cfg.mb_frames,
        "degrader.p_bo": cfg.p_bo,
        "degrader.bo_pixel_p": cfg.bo_pixel_p,
        "degrader.p_noise": cfg.p_noise,
        "degrader.noise_lo": cfg.noise_range[0],
        "degrader.noise_hi": cfg.noise_range[1],
    }


def network_config_from_flat(
    flat: dict[str, object], base: NetworkConfig | None = None
) -> NetworkConfig:
    base = base if base is not None else NetworkConfig()
    fields = _section(flat, "net")
    blocks1 = fields.pop("backbone_blocks1", base.backbone_blocks[0])
    blocks2 = fields.pop("backbone_blocks2", base.backbone_blocks[1])
    fields["backbone_blocks"] = (int(blocks1), int(blocks2))
    # grid sizes follow the input size unless explicitly overridden
    if "input_size" in fields and "feature_grid" not in fields:
        grid = int(fields["input_size"]) // 8
        fields["feature_grid"] = grid
        fields["fused_grid"] = (grid - 3) // 3 + 1
    return _apply(base, fields, "net")


def simulator_config_from_flat(
    flat: dict[str, object], base: SimulatorConfig | None = None
) -> SimulatorConfig:
    base = base if base is not None else SimulatorConfig()
    return _apply(base, _section(flat, "sim"), "sim")
