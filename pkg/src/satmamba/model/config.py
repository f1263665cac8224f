"""Architecture hyperparameters and the named configurations."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from ..geometry import DIRECTIONS


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    enc_dim: int = 768
    enc_depth: int = 12
    dec_dim: int = 512
    dec_depth: int = 8
    state_dim: int = 64
    head_dim: int = 96
    dec_head_dim: int = None  # defaults to head_dim when it divides
    directions: tuple = field(default_factory=lambda: tuple(DIRECTIONS))
    patch_size: int = 16
    channels: int = 3
    use_pos_enc: bool = True
    mask_ratio: float = 0.75
    expand: int = 2
    conv_width: int = 4

    def __post_init__(self):
        if not self.directions:
            raise ConfigError("at least one scan direction is required")
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ConfigError(f"unknown scan direction {d!r}")
        if len(set(self.directions)) != len(self.directions):
            raise ConfigError(f"duplicate scan directions in {self.directions}")
        if (self.enc_dim * self.expand) % self.head_dim:
            raise ConfigError(f"encoder inner dim {self.enc_dim * self.expand} "
                              f"not divisible by head dim {self.head_dim}")
        if self.dec_head_dim is None:
            # head_dim when it divides the decoder inner width, otherwise the
            # largest divisor not exceeding it (768*... -> 1024 picks 64)
            inner = self.dec_dim * self.expand
            cand = self.head_dim
            while inner % cand:
                cand -= 1
            self.dec_head_dim = cand
        if (self.dec_dim * self.expand) % self.dec_head_dim:
            raise ConfigError(f"decoder inner dim {self.dec_dim * self.expand} "
                              f"not divisible by decoder head dim {self.dec_head_dim}")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask ratio must be in [0, 1), got {self.mask_ratio}")

    @property
    def patch_pixels(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_text(self) -> str:
        """Canonical text form (sorted key=value lines)."""
        items = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "directions":
                v = ",".join(v)
            items[f.name] = v
        return "\n".join(f"{k}={items[k]}" for k in sorted(items)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        casts = {f.name: f for f in fields(cls)}
        for line in text.strip().splitlines():
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in casts:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "directions":
                kwargs[key] = tuple(d for d in raw.split(",") if d)
            elif key == "use_pos_enc":
                kwargs[key] = raw in ("True", "true", "1")
            elif key == "mask_ratio":
                kwargs[key] = float(raw)
            elif key == "dec_head_dim" and raw == "None":
                kwargs[key] = None
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


def desk_config(**overrides) -> ModelConfig:
    """CPU-tractable default used by the harness: 64x64 images, P=16."""
    base = dict(enc_dim=192, enc_depth=4, dec_dim=96, dec_depth=2,
                state_dim=16, head_dim=48, use_pos_enc=False)
    base.update(overrides)
    return ModelConfig(**base)


def satmamba_base(**overrides) -> ModelConfig:
    """The full-size configuration (dims 768/12 and 512/8, N=64, P_h=96).

    1024 decoder inner channels are not divisible by 96, so the decoder
    runs head dim 64.
    """
    base = dict(dec_head_dim=64)
    base.update(overrides)
    return ModelConfig(**base)
