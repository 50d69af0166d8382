"""Declarative architecture description, strict JSON loading, and validation."""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigError


@dataclass
class StemSpec:
    """3x3 stride-2 conv to ``out_channels``, then one MV2 block per stage."""

    out_channels: int = 16
    stages: list[list[int]] = field(default_factory=list)  # [out_channels, stride] pairs
    expansion_ratio: int = 2

    @property
    def final_channels(self) -> int:
        return self.stages[-1][0] if self.stages else self.out_channels

    @property
    def stride(self) -> int:
        s = 2
        for _, st in self.stages:
            s *= st
        return s


@dataclass
class MV2BlockSpec:
    in_channels: int
    out_channels: int
    stride: int = 1
    expansion_ratio: int = 4

    @property
    def has_residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


@dataclass
class MobileViTBlockSpec:
    channels: int
    transformer_dim: int
    transformer_layers: int
    heads: int = 4
    mlp_ratio: float = 2.0
    patch_h: int = 2
    patch_w: int = 2
    kernel_size: int = 3


@dataclass
class EncoderStageSpec:
    """Inverted-residual blocks (the first one downsamples) plus an optional MobileViT block."""

    mv2: list[MV2BlockSpec]
    mobilevit: Optional[MobileViTBlockSpec] = None

    @property
    def out_channels(self) -> int:
        return self.mv2[-1].out_channels

    @property
    def stride(self) -> int:
        s = 1
        for b in self.mv2:
            s *= b.stride
        return s


@dataclass
class DecoderBlockSpec:
    in_channels: int
    skip_channels: int
    out_channels: int
    global_refine: Optional[MobileViTBlockSpec] = None


@dataclass
class HeadSpec:
    in_channels: int
    hidden_channels: int
    upsample: int = 2


@dataclass
class ModelConfig:
    image_size: int
    stem: StemSpec
    encoder_stages: list[EncoderStageSpec]
    bottleneck: EncoderStageSpec
    decoder_stages: list[DecoderBlockSpec]
    head: HeadSpec
    in_channels: int = 3
    out_channels: int = 1

    @property
    def total_stride(self) -> int:
        s = self.stem.stride
        for st in self.encoder_stages:
            s *= st.stride
        return s * self.bottleneck.stride

    @property
    def input_multiple(self) -> int:
        """Smallest size step an input may take: the total stride, raised so
        every MobileViT block sees a whole number of patches."""
        need = self.total_stride
        factor = self.stem.stride
        stages = list(self.encoder_stages) + [self.bottleneck]
        for st in stages:
            factor *= st.stride
            if st.mobilevit is not None:
                need = math.lcm(need, factor * st.mobilevit.patch_h, factor * st.mobilevit.patch_w)
        for d in self.decoder_stages:
            factor //= 2
            if d.global_refine is not None and factor:
                need = math.lcm(need, factor * d.global_refine.patch_h, factor * d.global_refine.patch_w)
        return need

    def skip_channels(self) -> list[int]:
        return [self.stem.final_channels] + [s.out_channels for s in self.encoder_stages]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _build(cls, data, "config")


def _build(tp, data, path: str):
    origin = typing.get_origin(tp)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if data is None:
            return None
        return _build(args[0], data, path)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(data, list):
            raise ConfigError(f"{path}: expected a list, got {type(data).__name__}")
        return [_build(item, v, f"{path}[{i}]") for i, v in enumerate(data)]
    if dataclasses.is_dataclass(tp):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
        hints = typing.get_type_hints(tp)
        fields = {f.name: f for f in dataclasses.fields(tp)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError([f"{path}: unknown key {k!r}" for k in unknown])
        kwargs = {}
        missing = []
        for name, f in fields.items():
            if name in data:
                kwargs[name] = _build(hints[name], data[name], f"{path}.{name}")
            elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                missing.append(f"{path}: missing key {name!r}")
        if missing:
            raise ConfigError(missing)
        return tp(**kwargs)
    if tp is float:
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {data!r}")
        return float(data)
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            raise ConfigError(f"{path}: expected an integer, got {data!r}")
        return data
    return data


def validate(cfg: ModelConfig) -> None:
    """Raise :class:`ConfigError` listing every violated constraint."""
    problems: list[str] = []

    def positive(value, label):
        if not isinstance(value, int) or value < 1:
            problems.append(f"{label} must be a positive integer, got {value!r}")

    positive(cfg.image_size, "image_size")
    positive(cfg.in_channels, "in_channels")
    positive(cfg.out_channels, "out_channels")
    positive(cfg.stem.out_channels, "stem.out_channels")
    positive(cfg.stem.expansion_ratio, "stem.expansion_ratio")
    for i, st in enumerate(cfg.stem.stages):
        if len(st) != 2:
            problems.append(f"stem.stages[{i}] must be [out_channels, stride]")
            continue
        positive(st[0], f"stem.stages[{i}].out_channels")
        if st[1] not in (1, 2):
            problems.append(f"stem.stages[{i}].stride must be 1 or 2, got {st[1]!r}")

    res = cfg.image_size // 2 if isinstance(cfg.image_size, int) else 0
    for _, st in cfg.stem.stages:
        res //= st if st in (1, 2) else 1
    channels = cfg.stem.final_channels

    def check_vit(spec: MobileViTBlockSpec, expected_c: int, resolution: int, label: str):
        if spec.channels != expected_c:
            problems.append(f"{label}.channels is {spec.channels}, expected {expected_c}")
        positive(spec.transformer_dim, f"{label}.transformer_dim")
        positive(spec.heads, f"{label}.heads")
        positive(spec.patch_h, f"{label}.patch_h")
        positive(spec.patch_w, f"{label}.patch_w")
        if isinstance(spec.transformer_layers, bool) or not isinstance(spec.transformer_layers, int) \
                or spec.transformer_layers < 0:
            problems.append(f"{label}.transformer_layers must be a non-negative integer")
        if spec.heads >= 1 and spec.transformer_dim % spec.heads:
            problems.append(f"{label}.transformer_dim {spec.transformer_dim} not divisible by heads {spec.heads}")
        if spec.mlp_ratio <= 0:
            problems.append(f"{label}.mlp_ratio must be positive")
        if spec.kernel_size < 1 or spec.kernel_size % 2 == 0:
            problems.append(f"{label}.kernel_size must be odd, got {spec.kernel_size}")
        if resolution and spec.patch_h >= 1 and spec.patch_w >= 1 and (
                resolution % spec.patch_h or resolution % spec.patch_w):
            problems.append(f"{label}: resolution {resolution} not divisible by patch "
                            f"{spec.patch_h}x{spec.patch_w}")

    stage_res = []
    stages = [(f"encoder_stages[{i}]", s) for i, s in enumerate(cfg.encoder_stages)]
    stages.append(("bottleneck", cfg.bottleneck))
    for label, stage in stages:
        if not stage.mv2:
            problems.append(f"{label}.mv2 must contain at least one block")
            continue
        for j, b in enumerate(stage.mv2):
            bl = f"{label}.mv2[{j}]"
            if b.in_channels != channels:
                problems.append(f"{bl}.in_channels is {b.in_channels}, expected {channels}")
            positive(b.out_channels, f"{bl}.out_channels")
            positive(b.expansion_ratio, f"{bl}.expansion_ratio")
            if b.stride not in (1, 2):
                problems.append(f"{bl}.stride must be 1 or 2, got {b.stride!r}")
            else:
                res //= b.stride
            channels = b.out_channels
        if stage.mobilevit is not None:
            check_vit(stage.mobilevit, channels, res, f"{label}.mobilevit")
        stage_res.append(res)

    skips = cfg.skip_channels()
    if len(cfg.decoder_stages) != len(skips):
        problems.append(f"decoder_stages has {len(cfg.decoder_stages)} entries but the encoder "
                        f"provides {len(skips)} skip outputs")
    for i, d in enumerate(cfg.decoder_stages):
        label = f"decoder_stages[{i}]"
        if d.in_channels != channels:
            problems.append(f"{label}.in_channels is {d.in_channels}, expected {channels}")
        mirror = len(skips) - 1 - i
        if 0 <= mirror < len(skips) and d.skip_channels != skips[mirror]:
            problems.append(f"{label}.skip_channels is {d.skip_channels}, expected {skips[mirror]}")
        positive(d.out_channels, f"{label}.out_channels")
        res *= 2
        if d.global_refine is not None:
            check_vit(d.global_refine, d.out_channels, res, f"{label}.global_refine")
        channels = d.out_channels
    if cfg.head.in_channels != channels:
        problems.append(f"head.in_channels is {cfg.head.in_channels}, expected {channels}")
    positive(cfg.head.hidden_channels, "head.hidden_channels")
    positive(cfg.head.upsample, "head.upsample")

    if not problems:
        up = 2 ** len(cfg.decoder_stages) * cfg.head.upsample
        if up != cfg.total_stride:
            problems.append(f"encoder downsamples by {cfg.total_stride} but decoder and head "
                            f"upsample by {up}")
        if cfg.image_size % cfg.total_stride:
            problems.append(f"image_size {cfg.image_size} not divisible by total stride {cfg.total_stride}")
    if problems:
        raise ConfigError(problems)


BUILTIN = {"ref": "mobileunetr-ref.json", "tiny": "mobileunetr-tiny.json"}


def load_config(source: Union[str, Path, dict, ModelConfig]) -> ModelConfig:
    """Load and validate a config from a built-in name (``ref``, ``tiny``), a path, or a dict."""
    if isinstance(source, ModelConfig):
        cfg = source
    elif isinstance(source, dict):
        cfg = ModelConfig.from_dict(source)
    elif isinstance(source, str) and source in BUILTIN:
        text = resources.files("mobileunetr.configs").joinpath(BUILTIN[source]).read_text(encoding="utf-8")
        cfg = ModelConfig.from_dict(json.loads(text))
    else:
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {str(path)!r}: {exc.strerror or exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {str(path)!r} is not valid JSON: {exc}") from exc
        cfg = ModelConfig.from_dict(data)
    validate(cfg)
    return cfg


def save_config(cfg: ModelConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(cfg.to_json() + "\n", encoding="utf-8")


def assemble_config(image_size: int, stem_channels: int, stem_stages: list, encoder: list[dict],
                    bottleneck: dict, decoder_refine: list, head_hidden: int, heads: int = 4,
                    mlp_ratio: float = 2.0, in_channels: int = 3, out_channels: int = 1) -> ModelConfig:
    """Build a wired config from compact stage descriptions.

    ``encoder`` and ``bottleneck`` entries hold ``channels``, ``blocks`` (MV2
    count, first one stride 2), ``expansion`` and ``vit`` (``None`` or
    ``(transformer_dim, layers)`` / ``(transformer_dim, layers, patch)``).
    ``decoder_refine`` gives one ``vit`` entry per decoder stage, deepest
    first. Decoder widths mirror the skip they consume.
    """

    def vit(entry, channels):
        if entry is None:
            return None
        d, layers, *rest = entry
        patch = rest[0] if rest else 2
        return MobileViTBlockSpec(channels, d, layers, heads, mlp_ratio, patch, patch)

    c = stem_stages[-1][0] if stem_stages else stem_channels
    stem = StemSpec(stem_channels, [list(s) for s in stem_stages])

    def stage(entry):
        nonlocal c
        blocks = []
        for j in range(entry.get("blocks", 1)):
            blocks.append(MV2BlockSpec(c, entry["channels"], 2 if j == 0 else 1, entry.get("expansion", 4)))
            c = entry["channels"]
        return EncoderStageSpec(blocks, vit(entry.get("vit"), c))

    enc = [stage(e) for e in encoder]
    skips = [stem.final_channels] + [e.out_channels for e in enc]
    bott = stage(bottleneck)
    dec = []
    for i, refine in enumerate(decoder_refine):
        out_c = skips[len(skips) - 1 - i]
        dec.append(DecoderBlockSpec(c, out_c, out_c, vit(refine, out_c)))
        c = out_c
    return ModelConfig(image_size, stem, enc, bott, dec, HeadSpec(c, head_hidden, 2), in_channels, out_channels)
