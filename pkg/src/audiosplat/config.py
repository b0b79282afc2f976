"""Flat key=value run configuration shared by every CLI command.

One UTF-8 text file carries both scene-generation and training keys;
``#`` starts a comment. Unknown keys are a hard error so typos never pass
silently. Command-line ``--set key=value`` pairs override file values.
"""

from __future__ import annotations

from dataclasses import fields


class UnknownKeyError(KeyError):
    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"unknown config key '{self.key}'"


def coerce_dataclass_kwargs(cls, raw, tuple_keys=("scales",)):
    """Typed kwargs for dataclass ``cls`` from a string map; skips other keys."""
    out = {}
    by_name = {f.name: f for f in fields(cls)}
    for key, val in raw.items():
        if key not in by_name:
            continue
        f = by_name[key]
        if f.name in tuple_keys:
            out[key] = tuple(int(x) for x in str(val).split(",") if x != "")
        elif f.type in ("bool", bool):
            out[key] = bool(int(val))
        elif f.type in ("int", int):
            out[key] = int(val)
        elif f.type in ("float", float):
            out[key] = float(val)
        else:
            out[key] = str(val)
    return out


def parse_config_text(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got '{stripped}'")
        key, _, val = stripped.partition("=")
        raw[key.strip()] = val.strip()
    return raw


class RunConfig:
    """Validated flat configuration; builds SceneSpec and TrainConfig views."""

    def __init__(self, raw=None):
        from .synthetic import SceneSpec
        from .trainer import TrainConfig

        self._known = {f.name for f in fields(SceneSpec)} | {f.name for f in fields(TrainConfig)}
        self.raw = {}
        if raw:
            self.update(raw)

    def update(self, raw):
        for key in raw:
            if key not in self._known:
                raise UnknownKeyError(key)
        self.raw.update(raw)

    @classmethod
    def from_file(cls, path, overrides=None):
        with open(path, encoding="utf-8") as f:
            raw = parse_config_text(f.read())
        cfg = cls(raw)
        if overrides:
            cfg.update(overrides)
        return cfg

    def scene_spec(self):
        from .synthetic import SceneSpec

        return SceneSpec(**coerce_dataclass_kwargs(SceneSpec, self.raw))

    def train_config(self):
        from .trainer import TrainConfig

        return TrainConfig(**coerce_dataclass_kwargs(TrainConfig, self.raw))
