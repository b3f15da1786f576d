"""Transformer configuration, named variants, and exact parameter counting."""

from dataclasses import dataclass, replace

from ..errors import ConfigError

# layers / heads / hidden / mlp width; hidden = 64 per head for the named
# variants, mlp = 4x hidden. "mini" is a reduced preset for CPU-scale runs.
VARIANTS = {
    "tiny": dict(layers=12, heads=3, hidden=192, mlp_size=768),
    "small": dict(layers=12, heads=6, hidden=384, mlp_size=1536),
    "base": dict(layers=12, heads=12, hidden=768, mlp_size=3072),
    "mini": dict(layers=4, heads=3, hidden=192, mlp_size=768),
}


@dataclass(frozen=True)
class SiTConfig:
    layers: int
    heads: int
    hidden: int
    mlp_size: int
    patch_dim: int = 612  # V * C of the default (6, 2) patching with 4 channels
    seq_len: int = 320  # patch tokens per example
    dropout_p: float = 0.0
    variant: str = "custom"

    def __post_init__(self):
        for label in ("layers", "heads", "hidden", "mlp_size", "patch_dim", "seq_len"):
            value = getattr(self, label)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{label} must be a positive integer, got {value!r}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.hidden < 2:
            raise ConfigError("hidden must be >= 2 (regression head halves it)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "heads": self.heads,
            "hidden": self.hidden,
            "mlp_size": self.mlp_size,
            "patch_dim": self.patch_dim,
            "seq_len": self.seq_len,
            "dropout_p": self.dropout_p,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "SiTConfig":
        try:
            return cls(**record)
        except TypeError as exc:
            raise ConfigError(f"bad model config record: {exc}") from None


def variant_config(name: str, **overrides) -> SiTConfig:
    """Config for a named variant, with optional field overrides."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}")
    cfg = SiTConfig(variant=name, **VARIANTS[name])
    return replace(cfg, **overrides) if overrides else cfg


def param_shapes(config: SiTConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor, name -> shape, in canonical order.

    The model builder materializes exactly this dict, so param_count and the
    built model cannot drift apart.
    """
    d, mlp, p = config.hidden, config.mlp_size, config.patch_dim
    mid = d // 2
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj.w": (p, d),
        "patch_proj.b": (d,),
        "reg_token": (d,),
        "pos_embed": (config.seq_len + 1, d),
    }
    for layer in range(config.layers):
        prefix = f"blocks.{layer}"
        shapes[f"{prefix}.ln1.g"] = (d,)
        shapes[f"{prefix}.ln1.b"] = (d,)
        for mat in ("q", "k", "v", "o"):
            shapes[f"{prefix}.attn.w{mat}"] = (d, d)
            shapes[f"{prefix}.attn.b{mat}"] = (d,)
        shapes[f"{prefix}.ln2.g"] = (d,)
        shapes[f"{prefix}.ln2.b"] = (d,)
        shapes[f"{prefix}.ffn.w1"] = (d, mlp)
        shapes[f"{prefix}.ffn.b1"] = (mlp,)
        shapes[f"{prefix}.ffn.w2"] = (mlp, d)
        shapes[f"{prefix}.ffn.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.ln.g"] = (d,)
    shapes["head.ln.b"] = (d,)
    shapes["head.fc1.w"] = (d, mid)
    shapes["head.fc1.b"] = (mid,)
    shapes["head.fc2.w"] = (mid, 1)
    shapes["head.fc2.b"] = (1,)
    shapes["mask_token"] = (d,)
    shapes["mpp_head.w"] = (d, p)
    shapes["mpp_head.b"] = (p,)
    return shapes


def param_count(config: SiTConfig) -> int:
    """Exact count of learnable scalars."""
    total = 0
    for shape in param_shapes(config).values():
        n = 1
        for dim in shape:
            n *= dim
        total += n
    return total
