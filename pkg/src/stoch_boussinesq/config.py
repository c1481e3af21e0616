"""JSON experiment configs with field and line diagnostics."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import MISSING, dataclass, fields
from pathlib import Path

from .ensemble import EnsembleConfig, GridConfig, PicardConfig, SigmaConfig, TransportConfig, config_errors

SECTIONS = {"grid": GridConfig, "transport": TransportConfig, "sigma": SigmaConfig, "picard": PicardConfig}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig(EnsembleConfig):
    """EnsembleConfig plus output options; one flat JSON document."""

    output_dir: str = "runs"
    checkpoints: bool = False
    write_traces: bool = True

    def ensemble(self) -> EnsembleConfig:
        d = self.to_dict()
        return EnsembleConfig(**{f.name: d[f.name] for f in fields(EnsembleConfig)})

    def config_hash(self) -> str:
        return hashlib.sha256(self.key().encode()).hexdigest()[:12]

    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"run_{self.config_hash()}"


def _line_of(text: str, name: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(name.split(".")[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source: str, text: str, name: str) -> str:
    line = _line_of(text, name)
    return f"{source}:{line}" if line else source


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}:{err.lineno}:{err.colno}: invalid JSON: {err.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")

    problems = []
    top = {f.name for f in fields(ExperimentConfig)}
    for key, val in raw.items():
        if key not in top:
            problems.append(f"{_where(source, text, key)}: unknown field '{key}'")
        elif key in SECTIONS:
            if not isinstance(val, dict):
                problems.append(f"{_where(source, text, key)}: field '{key}' must be an object")
                continue
            allowed = {f.name for f in fields(SECTIONS[key])}
            for sub in val:
                if sub not in allowed:
                    problems.append(f"{_where(source, text, sub)}: unknown field '{key}.{sub}'")
    if problems:
        raise ConfigError("\n".join(problems))

    return _build(raw)


def _build(raw: dict) -> ExperimentConfig:
    kwargs = {}
    for f in fields(ExperimentConfig):
        if f.name in raw:
            kwargs[f.name] = raw[f.name]
    errs = []
    for name, cls in SECTIONS.items():
        if name in kwargs:
            try:
                kwargs[name] = cls(**kwargs[name])
            except TypeError as err:
                errs.append(f"{name}: {err}")
    if errs:
        raise ConfigError("\n".join(errs))
    # validate on an unvalidated instance so all field problems surface together
    probe = object.__new__(ExperimentConfig)
    for f in fields(ExperimentConfig):
        if f.name in kwargs:
            val = kwargs[f.name]
        elif f.default is not MISSING:
            val = f.default
        else:
            val = f.default_factory()
        object.__setattr__(probe, f.name, val)
    try:
        errs = config_errors(probe)
    except (TypeError, AttributeError) as err:
        errs = [f"type error: {err}"]
    if errs:
        raise ConfigError("\n".join(errs))
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config ({err.strerror})") from None
    try:
        return parse_config(text, str(path))
    except ConfigError as err:
        # attach line numbers to field-prefixed messages
        lines = []
        for msg in str(err).splitlines():
            head = msg.split(":", 1)[0]
            if head and not head.startswith(str(path)) and re.fullmatch(r"[A-Za-z_.]+", head):
                line = _line_of(text, head)
                msg = f"{path}:{line}: {msg}" if line else f"{path}: {msg}"
            lines.append(msg)
        raise ConfigError("\n".join(lines)) from None
