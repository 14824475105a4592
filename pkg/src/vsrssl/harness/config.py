"""Experiment configuration: JSON files plus dotted-key overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from ..corpus import CorpusConfig
from ..dsp import MelConfig
from ..train.loops import TrainPlan, plan_defaults

PLAN_SECTIONS = ("pretext", "word", "sentence")


class ConfigError(ValueError):
    """Bad config file, unknown key or violated invariant (CLI exit status 1)."""


@dataclass
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    model: str = "desk"
    scale: str = "desk"
    pretext: TrainPlan = field(default_factory=lambda: plan_defaults("pretext"))
    word: TrainPlan = field(default_factory=lambda: plan_defaults("word"))
    sentence: TrainPlan = field(default_factory=lambda: plan_defaults("sentence"))
    fractions: list[float] = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    regimes: list[str] = field(default_factory=lambda: ["supervised", "frozen", "finetuned"])
    taps: list[str] = field(default_factory=lambda: ["res-b3", "res-b4", "ce-b1", "ce-b2"])
    tap_fraction: float = 0.1
    sweep_task: str = "word"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs/default"
    corpus_dir: str | None = None

    def validate(self) -> None:
        if any(isinstance(f, bool) or not isinstance(f, (int, float)) for f in self.fractions):
            raise ConfigError("fractions: must be numbers")
        if any(isinstance(s, bool) or not isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds: must be integers")
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise ConfigError("fractions: every value must lie in (0, 1]")
        if list(self.fractions) != sorted(self.fractions):
            raise ConfigError("fractions: must be sorted ascending")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if not 0 < self.tap_fraction <= 1:
            raise ConfigError("tap_fraction: must lie in (0, 1]")
        if self.sweep_task not in ("word", "sentence"):
            raise ConfigError(f"sweep_task: must be word or sentence, got {self.sweep_task!r}")
        for name in PLAN_SECTIONS:
            plan = getattr(self, name)
            if plan.task != name:
                raise ConfigError(f"{name}.task: must be {name!r}")
            try:
                plan.validate()
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            if plan.checkpoint and not Path(plan.checkpoint).exists():
                raise ConfigError(f"{name}.checkpoint: {plan.checkpoint} does not exist")

    @property
    def corpus_root(self) -> Path:
        return Path(self.corpus_dir) if self.corpus_dir else Path(self.out_dir) / "corpus"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def default_dict(scale: str = "desk") -> dict:
    cfg = ExperimentConfig(scale=scale)
    if scale != "desk":
        for name in PLAN_SECTIONS:
            setattr(cfg, name, plan_defaults(name, scale))
    return cfg.to_dict()


def _set_path(d: dict, path: Sequence[str], value: Any, token: str) -> None:
    node = d
    for part in path[:-1]:
        if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {token!r}")
        node = node[part]
    if path[-1] not in node:
        raise ConfigError(f"unknown config key {token!r}")
    node[path[-1]] = value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_key(d: dict, key: str, section: str | None = None) -> list[str]:
    """Dotted path for ``key``. A bare key is looked up in ``section`` first,
    then at the top level, then in any section if that match is unique."""
    if "." in key:
        return key.split(".")
    if section is not None and key in d.get(section, {}):
        return [section, key]
    if key in d:
        return [key]
    hits = [name for name, sub in d.items() if isinstance(sub, dict) and key in sub]
    if len(hits) == 1:
        return [hits[0], key]
    if not hits:
        raise ConfigError(f"unknown config key {key!r}")
    raise ConfigError(f"ambiguous config key {key!r}; qualify it as one of {', '.join(h + '.' + key for h in hits)}")


def apply_overrides(d: dict, overrides: Sequence[str], section: str | None = None) -> dict:
    d = copy.deepcopy(d)
    for token in overrides:
        if "=" not in token:
            raise ConfigError(f"override {token!r} is not key=value")
        key, text = token.split("=", 1)
        _set_path(d, resolve_key(d, key, section), _parse_value(text), token)
    return d


def _merge(base: dict, upd: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if k not in out:
            raise ConfigError(f"unknown config key {prefix + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, prefix + k + ".")
        else:
            out[k] = v
    return out


def _coerce(value: Any, default: Any, key: str) -> Any:
    """Check ``value`` against the type of the field's default (None defaults accept anything)."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, (list, tuple))
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, d: dict, prefix: str):
    names = {f.name for f in fields(cls)}
    for k in d:
        if k not in names:
            raise ConfigError(f"unknown config key {prefix + k!r}")
    defaults = cls()
    d = {k: v if hasattr(v, "__dataclass_fields__") else _coerce(v, getattr(defaults, k), prefix + k)
         for k, v in d.items()}
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def from_dict(d: dict) -> ExperimentConfig:
    d = copy.deepcopy(d)
    corpus = dict(d.pop("corpus"))
    corpus["pretrain_seconds"] = tuple(corpus.get("pretrain_seconds", CorpusConfig().pretrain_seconds))
    sub = {
        "corpus": _build(CorpusConfig, corpus, "corpus."),
        "mel": _build(MelConfig, d.pop("mel"), "mel."),
    }
    for name in PLAN_SECTIONS:
        sub[name] = _build(TrainPlan, d.pop(name), name + ".")
    return _build(ExperimentConfig, {**d, **sub}, "")


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), section: str | None = None,
                validate: bool = True) -> ExperimentConfig:
    """Defaults <- config file <- overrides, then invariant checks."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    d = _merge(default_dict(raw.get("scale", "desk")), raw)
    d = apply_overrides(d, overrides, section)
    cfg = from_dict(d)
    if validate:
        cfg.validate()
    return cfg
