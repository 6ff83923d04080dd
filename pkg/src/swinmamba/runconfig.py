"""Flat ``key = value`` run configuration.

One assignment per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys are an error so a typo can never fall back to a default
silently. The fully resolved configuration is echoed next to every run's
outputs and can be fed back in unchanged.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from .config import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_int(text: str) -> Optional[int]:
    return None if text.lower() in ("", "none") else int(text)


def _opt_ints(text: str) -> Optional[Tuple[int, ...]]:
    return None if text.lower() in ("", "none") else _ints(text)


def _opt_str(text: str) -> Optional[str]:
    return None if text.lower() in ("", "none") else text


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


KEYS: "OrderedDict[str, Key]" = OrderedDict([
    # run
    ("seed", Key(int, 0, "root seed for data, init and batch order")),
    # model
    ("base_dim", Key(int, 16, "stage-1 channel width C")),
    ("depths", Key(_ints, (2, 2, 2, 2), "blocks per stage")),
    ("scan_modes", Key(_strs, ("local", "local", "global", "global"), "local|global per stage")),
    ("window", Key(int, 14, "window side w")),
    ("shift", Key(int, 7, "shift distance s")),
    ("stage_windows", Key(_opt_ints, None, "optional per-stage windows")),
    ("stage_shifts", Key(_opt_ints, None, "optional per-stage shifts")),
    ("shift_mode", Key(str, "cyclic", "cyclic|boundary")),
    ("d_state", Key(int, 8, "S6 state size N")),
    ("expand", Key(int, 2, "inner expansion ratio")),
    ("num_classes", Key(int, 3, "K")),
    ("image_size", Key(_ints, (64, 64), "H,W")),
    ("fpn_dim", Key(_opt_int, None, "decoder width; none means 4C")),
    ("ppm_scales", Key(_ints, (1, 2, 3, 6), "pyramid pooling grids")),
    ("s6_method", Key(str, "sequential", "sequential|parallel")),
    # training
    ("steps", Key(int, 500, "optimizer steps")),
    ("batch_size", Key(int, 8, "images per step")),
    ("lr", Key(float, 3e-4, "AdamW learning rate")),
    ("weight_decay", Key(float, 0.01, "decoupled weight decay")),
    ("eval_every", Key(int, 50, "validation period in steps")),
    ("n_train", Key(int, 256, "synthetic training scenes")),
    ("n_val", Key(int, 32, "synthetic validation scenes")),
    ("noise", Key(float, 0.05, "additive image noise sigma")),
    # eval
    ("checkpoint", Key(_opt_str, None, "parameter container to evaluate")),
    # ablation
    ("ablate_steps", Key(_opt_int, None, "steps per ablation row; none means steps")),
    # bench
    ("bench_resolutions", Key(_ints, (128, 256), "input sides; the scanned map is side/4")),
    ("bench_dim", Key(int, 32, "channels per token in the bench")),
    ("bench_batch", Key(int, 1, "maps per bench call")),
    ("bench_trials", Key(int, 5, "timed trials (median, IQR)")),
    ("bench_warmup", Key(int, 2, "untimed warmup calls")),
])

REQUIRED = {"eval": ("checkpoint",)}


def parse_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = KEYS[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    return parse_text(path.read_text(encoding="utf-8"), str(path))


def resolve(values: Mapping[str, Any], command: Optional[str] = None) -> "OrderedDict[str, Any]":
    """All keys with defaults filled in; checks the command's required keys."""
    for key in REQUIRED.get(command, ()):
        if values.get(key) is None:
            raise ConfigError(f"{command}: missing required config key {key!r}")
    return OrderedDict((k, values.get(k, key.default)) for k, key in KEYS.items())


def dumps(cfg: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in cfg.items())


def echo(cfg: Mapping[str, Any], out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.effective"
    path.write_text(dumps(cfg), encoding="utf-8")
    return path


def model_config(cfg: Mapping[str, Any]) -> ModelConfig:
    try:
        return ModelConfig(
            base_dim=cfg["base_dim"], depths=cfg["depths"], scan_modes=cfg["scan_modes"],
            window=cfg["window"], shift=cfg["shift"], stage_windows=cfg["stage_windows"],
            stage_shifts=cfg["stage_shifts"], shift_mode=cfg["shift_mode"], d_state=cfg["d_state"],
            expand=cfg["expand"], num_classes=cfg["num_classes"], image_size=cfg["image_size"],
            fpn_dim=cfg["fpn_dim"], ppm_scales=cfg["ppm_scales"], s6_method=cfg["s6_method"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model configuration: {exc}") from None


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig(
        model=model_config(cfg), seed=cfg["seed"], steps=cfg["steps"], batch_size=cfg["batch_size"],
        lr=cfg["lr"], weight_decay=cfg["weight_decay"], eval_every=cfg["eval_every"],
        n_train=cfg["n_train"], n_val=cfg["n_val"], noise=cfg["noise"],
    )
