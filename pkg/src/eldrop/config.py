"""Experiment configuration files.

The format is INI-style: ``[section]`` headers followed by ``key = value``
lines, with lists written comma-separated. Unknown sections or keys are
rejected so that typos fail loudly, and every error names the offending
line.

Example::

    [architecture]
    hidden = 1024, 1024, 1024
    activation = sigmoid
    input_keep = 0.8
    hidden_keep = 0.5

    [train]
    lam = 1.0
    epochs = 2000
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, EldropError
from .inference import InferenceConfig
from .trainer import TrainConfig

_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")


@dataclass
class Architecture:
    hidden: list = field(default_factory=lambda: [64, 64])
    activation: list = field(default_factory=lambda: ["relu"])  # one entry, or one per hidden layer
    input_keep: float = 0.8
    hidden_keep: float = 0.5

    def sizes(self, input_dim: int, k: int) -> list:
        return [input_dim, *self.hidden, k]

    def activations(self) -> list:
        acts = list(self.activation)
        if len(acts) == 1:
            acts = acts * len(self.hidden)
        if len(acts) != len(self.hidden):
            raise ConfigError(f"{len(acts)} activations for {len(self.hidden)} hidden layers")
        return acts + ["softmax"]

    def keep_probs(self) -> list:
        return [self.input_keep] + [self.hidden_keep] * len(self.hidden)


@dataclass
class DataSource:
    source: str = "synth"  # "synth" or "idx"
    # synthetic Gaussian classes
    k: int = 4
    d: int = 16
    n_per_class: int = 1000
    separation: float = 3.0
    test_per_class: int = 500
    data_seed: int = 0
    # IDX files
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    # validation examples held out of the training set
    holdout: int = 2000


@dataclass
class GapSettings:
    examples: int = 50
    mc_samples: int = 200
    inner_samples: int = 50
    path: str = "stochastic"


@dataclass
class VerifySettings:
    nets: int = 20
    examples: int = 8


@dataclass
class ExperimentConfig:
    seed: int = 0
    architecture: Architecture = field(default_factory=Architecture)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    data: DataSource = field(default_factory=DataSource)
    gap: GapSettings = field(default_factory=GapSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    lambdas: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 5.0, 10.0])
    out: str = "runs"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with the run seed replaced everywhere it is consumed."""
        return dataclasses.replace(
            self,
            seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            inference=dataclasses.replace(self.inference, seed=seed),
        )

    def to_text(self) -> str:
        """Resolved configuration in the same format :func:`parse_config` reads."""
        lines = ["[experiment]", f"seed = {self.seed}", f"out = {self.out}", ""]
        for name, obj in (("architecture", self.architecture), ("train", self.train),
                          ("inference", self.inference), ("data", self.data), ("gap", self.gap),
                          ("verify", self.verify)):
            lines.append(f"[{name}]")
            for f in dataclasses.fields(obj):
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
            lines.append("")
        lines += ["[sweep]", f"lambdas = {_format(self.lambdas)}"]
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    index = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = n
    return index


def _convert(raw: str, like, key: str):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(like, list):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if like and isinstance(like[0], (int, float)) and not isinstance(like[0], bool):
            kind = type(like[0])
            return [kind(float(s)) if kind is int and float(s).is_integer() else kind(s) for s in items]
        return items
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float) or like is None:
        if raw.lower() == "none":
            return None
        return float(raw)
    return raw


# section name -> (attribute on ExperimentConfig, or None for top-level keys)
_SECTIONS = {
    "experiment": None,
    "architecture": "architecture",
    "train": "train",
    "inference": "inference",
    "data": "data",
    "gap": "gap",
    "verify": "verify",
    "sweep": None,
}


def parse_config(text: str, path=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno, path) from exc
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line, path) from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno, path) from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc), None, path) from exc

    lines = _line_index(text)
    cfg = ExperimentConfig()
    updates = {name: {} for name in _SECTIONS if _SECTIONS[name]}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), path)
        attr = _SECTIONS[section]
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            try:
                if section == "experiment":
                    if key == "seed":
                        cfg.seed = int(raw)
                    elif key == "out":
                        cfg.out = raw.strip()
                    else:
                        raise ConfigError(f"unknown key {key!r} in [experiment]", line, path)
                elif section == "sweep":
                    if key != "lambdas":
                        raise ConfigError(f"unknown key {key!r} in [sweep]", line, path)
                    cfg.lambdas = [float(v) for v in raw.split(",") if v.strip()]
                else:
                    current = getattr(cfg, attr)
                    names = {f.name for f in dataclasses.fields(current)}
                    if key not in names:
                        raise ConfigError(f"unknown key {key!r} in [{section}]", line, path)
                    updates[attr][key] = (_convert(raw, getattr(current, key), key), line)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", line, path) from exc

    for attr, values in updates.items():
        if not values:
            continue
        current = getattr(cfg, attr)
        try:
            setattr(cfg, attr, dataclasses.replace(current, **{k: v for k, (v, _) in values.items()}))
        except (EldropError, ValueError, TypeError) as exc:
            # validation happens on construction; blame the first key of the section
            first = min(line for _, line in values.values() if line is not None)
            raise ConfigError(f"[{attr}] {exc}", first, path) from exc

    # a seed in [experiment] drives training and inference unless they set their own
    if "seed" not in updates["train"]:
        cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    if "seed" not in updates["inference"]:
        cfg.inference = dataclasses.replace(cfg.inference, seed=cfg.seed)
    _validate(cfg, lines, path)
    return cfg


def _validate(cfg: ExperimentConfig, lines: dict, path) -> None:
    arch = cfg.architecture
    where = lines.get(("architecture", None))
    if any(h < 1 for h in arch.hidden):
        raise ConfigError("hidden layer sizes must be positive", lines.get(("architecture", "hidden"), where), path)
    for name in ("input_keep", "hidden_keep"):
        if not 0.0 < getattr(arch, name) <= 1.0:
            raise ConfigError(f"{name} must be in (0, 1]", lines.get(("architecture", name), where), path)
    try:
        arch.activations()
    except ConfigError as exc:
        raise ConfigError(str(exc), lines.get(("architecture", "activation"), where), path) from None
    if cfg.data.source not in ("synth", "idx"):
        raise ConfigError(f"unknown data source {cfg.data.source!r}", lines.get(("data", "source")), path)
    if cfg.gap.path not in ("deterministic", "stochastic"):
        raise ConfigError(f"unknown gap path {cfg.gap.path!r}", lines.get(("gap", "path")), path)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from exc
    return parse_config(text, path)
