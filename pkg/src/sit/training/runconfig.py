"""Flat key=value run configuration.

One ``key = value`` pair per line; blank lines and lines starting with ``#``
are ignored. Unknown keys are rejected so a typo fails loudly instead of
silently training with a default.

Training keys: task, variant, optimizer, lr, warmup_epochs, scheduler,
batch_size, epochs, seed, mask_prob, deconfound, freeze_backbone.
Pipeline keys: manifest, out_dir, layers, heads, hidden, mlp_size,
dropout_p, high_order, patch_order, max_seconds, eval_batch_size.

Unset keys take task-dependent defaults: pma regresses with SGD (lr 1e-4
from scratch, 1e-5 when fine-tuning), ga with Adam (5e-4 / 3e-4), and mpp
pretraining with Adam 5e-4. Warm-up defaults to 50 epochs, clamped to the
run length. deconfound defaults to true for ga and is invalid elsewhere.
"""

import math
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError
from ..model.config import SiTConfig, VARIANTS, variant_config
from .optim import OptimizerConfig

TASKS = ("pma", "ga", "mpp")

_DEFAULT_OPTIMIZER = {"pma": "sgd", "ga": "adam", "mpp": "adam"}
_DEFAULT_LR = {
    ("pma", False): 1e-4,
    ("pma", True): 1e-5,
    ("ga", False): 5e-4,
    ("ga", True): 3e-4,
    ("mpp", False): 5e-4,
    ("mpp", True): 5e-4,
}
_DEFAULT_WARMUP = 50.0


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """key=value lines -> dict, with line numbers in error messages."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def read_kv_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_kv_text(text, source=str(path))


def _to_str(key: str, value: str) -> str:
    return value


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _to_float(key: str, value: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"{key} must be finite, got {value!r}")
    return out


def _to_bool(key: str, value: str) -> bool:
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


# Canonical key order; doubles as the snapshot layout.
_KEYS = {
    "task": _to_str,
    "variant": _to_str,
    "optimizer": _to_str,
    "lr": _to_float,
    "warmup_epochs": _to_float,
    "scheduler": _to_str,
    "batch_size": _to_int,
    "epochs": _to_int,
    "seed": _to_int,
    "mask_prob": _to_float,
    "deconfound": _to_bool,
    "freeze_backbone": _to_bool,
    "manifest": _to_str,
    "out_dir": _to_str,
    "layers": _to_int,
    "heads": _to_int,
    "hidden": _to_int,
    "mlp_size": _to_int,
    "dropout_p": _to_float,
    "high_order": _to_int,
    "patch_order": _to_int,
    "max_seconds": _to_float,
    "eval_batch_size": _to_int,
}


def known_keys() -> tuple[str, ...]:
    """Accepted run-config keys, in canonical (snapshot) order."""
    return tuple(_KEYS)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved training/pretraining run settings."""

    task: str = "pma"
    variant: str = "tiny"
    optimizer: str = "sgd"
    lr: float = 1e-4
    warmup_epochs: float = 50.0
    scheduler: str = "none"
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0
    mask_prob: float = 0.5
    deconfound: bool = False
    freeze_backbone: bool = False
    manifest: str | None = None
    out_dir: str | None = None
    layers: int | None = None
    heads: int | None = None
    hidden: int | None = None
    mlp_size: int | None = None
    dropout_p: float | None = None
    high_order: int = 6
    patch_order: int = 2
    max_seconds: float | None = None
    eval_batch_size: int = 64

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.optimizer,
            lr=self.lr,
            warmup_epochs=self.warmup_epochs,
            scheduler=self.scheduler,
            batch_size=self.batch_size,
            epochs=self.epochs,
        )

    def model_config(self, patch_dim: int, seq_len: int) -> SiTConfig:
        """Variant preset + any per-field overrides, sized to the data."""
        overrides = {"patch_dim": patch_dim, "seq_len": seq_len}
        for field in ("layers", "heads", "hidden", "mlp_size", "dropout_p"):
            value = getattr(self, field)
            if value is not None:
                overrides[field] = value
        return variant_config(self.variant, **overrides)

    def to_items(self) -> list[tuple[str, str]]:
        """(key, value-string) pairs in canonical order; unset keys skipped."""
        items = []
        for key in _KEYS:
            value = getattr(self, key)
            if value is None:
                continue
            items.append((key, format_value(value)))
        return items


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve_run_config(pairs: dict[str, str], finetune: bool = False) -> RunConfig:
    """Typed, validated, default-filled config from raw key=value pairs."""
    unknown = sorted(set(pairs) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    typed = {key: _KEYS[key](key, value) for key, value in pairs.items()}

    task = typed.get("task", "pma")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")

    optimizer = typed.get("optimizer", _DEFAULT_OPTIMIZER[task]).lower()
    if optimizer not in ("sgd", "adam"):
        raise ConfigError(f"optimizer must be sgd or adam, got {optimizer!r}")

    epochs = typed.get("epochs", 100)
    typed.setdefault("lr", _DEFAULT_LR[(task, finetune)])
    typed.setdefault("warmup_epochs", min(_DEFAULT_WARMUP, float(epochs)))

    deconfound = typed.get("deconfound", task == "ga")
    if deconfound and task != "ga":
        raise ConfigError("deconfound is only valid for task = ga")

    seed = typed.get("seed", 0)
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")

    variant = typed.get("variant", "tiny")
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {sorted(VARIANTS)}, got {variant!r}")

    high = typed.get("high_order", 6)
    low = typed.get("patch_order", 2)
    if not 0 <= low < high <= 8:
        raise ConfigError(f"need 0 <= patch_order < high_order <= 8, got {low}/{high}")

    for key in ("layers", "heads", "hidden", "mlp_size", "eval_batch_size"):
        if key in typed and typed[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {typed[key]}")
    if "dropout_p" in typed and not 0.0 <= typed["dropout_p"] < 1.0:
        raise ConfigError(f"dropout_p must be in [0, 1), got {typed['dropout_p']}")
    if "mask_prob" in typed and not 0.0 <= typed["mask_prob"] <= 1.0:
        raise ConfigError(f"mask_prob must be in [0, 1], got {typed['mask_prob']}")
    if "max_seconds" in typed and typed["max_seconds"] <= 0:
        raise ConfigError(f"max_seconds must be > 0, got {typed['max_seconds']}")

    typed.update(task=task, optimizer=optimizer, deconfound=deconfound)
    run = RunConfig(**typed)
    run.optimizer_config()  # validates the optimizer field combination now
    return run


def load_run_config(path, overrides: dict[str, str] | None = None,
                    finetune: bool = False) -> RunConfig:
    """Parse a config file, apply CLI overrides, resolve defaults."""
    pairs = read_kv_file(path)
    for key, value in (overrides or {}).items():
        pairs[key] = value
    return resolve_run_config(pairs, finetune=finetune)


def write_snapshot(path, run: RunConfig, extra: dict | None = None) -> None:
    """Resolved-config snapshot, re-parseable by load_run_config.

    `extra` entries (command line, checkpoint paths) go in as comments so
    the snapshot stays a valid config file.
    """
    lines = [f"{key} = {value}" for key, value in run.to_items()]
    for key, value in (extra or {}).items():
        lines.append(f"# {key} = {format_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


_SYNTH_INT = ("subjects", "channels", "n_bases", "seed")
_SYNTH_FLOAT = ("age_min", "age_max", "noise_std", "preterm_fraction",
                "maturation_jitter")


def load_synth_spec(path):
    """key=value file -> SyntheticSpec; `subjects` is the one required key."""
    from ..data.synthetic import SyntheticSpec

    kwargs = {}
    for key, value in read_kv_file(path).items():
        if key in _SYNTH_INT:
            kwargs[key] = _to_int(key, value)
        elif key in _SYNTH_FLOAT:
            kwargs[key] = _to_float(key, value)
        else:
            known = ", ".join(_SYNTH_INT + _SYNTH_FLOAT)
            raise ConfigError(f"unknown synthetic spec key {key!r}; known: {known}")
    if "subjects" not in kwargs:
        raise ConfigError("synthetic spec needs subjects = <n>")
    return SyntheticSpec(**kwargs)
