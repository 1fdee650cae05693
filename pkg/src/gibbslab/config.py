"""Experiment configuration: TOML sections with typed accessors.

Sections: [lattice] [potential] [interaction] [boundary] [grid] [chain]
[block] [bootstrap] [fit] [run].  Which sections must be present depends on
the subcommand; ``require`` performs that check with a readable error.
"""

from __future__ import annotations

from dataclasses import dataclass

import tomli

from .errors import ConfigError

_KNOWN_SECTIONS = (
    "lattice",
    "potential",
    "interaction",
    "boundary",
    "grid",
    "chain",
    "block",
    "bootstrap",
    "fit",
    "run",
)

REQUIRED_SECTIONS = {
    "exact": ("lattice", "potential", "interaction", "grid"),
    "sample": ("lattice", "potential", "interaction", "chain"),
    "blockcoef": ("lattice", "potential", "interaction", "block"),
    "bootstrap": ("lattice", "potential", "interaction", "bootstrap"),
    "fit": ("fit",),
    "verify": (),
}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    path: str = "<memory>"
    text: str = ""

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def has(self, name: str) -> bool:
        return name in self.raw

    def require(self, subcommand: str):
        if subcommand not in REQUIRED_SECTIONS:
            raise ConfigError(
                f"unknown subcommand {subcommand!r}; "
                f"expected one of {sorted(REQUIRED_SECTIONS)}"
            )
        missing = [s for s in REQUIRED_SECTIONS[subcommand] if s not in self.raw]
        if missing:
            raise ConfigError(
                f"{self.path}: subcommand {subcommand!r} needs sections "
                f"{missing} (present: {sorted(self.raw)})"
            )

    def get(self, section: str, key: str, default=None):
        return self.raw.get(section, {}).get(key, default)

    def seed(self, override=None) -> int:
        if override is not None:
            return int(override)
        return int(self.get("run", "seed", 0))


def load_config(path) -> ExperimentConfig:
    """Parse a TOML config file; parse errors keep tomli's line/column info."""
    try:
        with open(path, "rb") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomli.loads(text.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(raw) - set(_KNOWN_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    return ExperimentConfig(raw=raw, path=str(path), text=text.decode("utf-8"))


def config_from_dict(raw: dict) -> ExperimentConfig:
    return ExperimentConfig(raw=dict(raw))
