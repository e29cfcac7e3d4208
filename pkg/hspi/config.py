"""Application settings, loaded from environment variables / .env file.

Also home of the line-oriented reader shared by every plain-text config
(platform registries, oracle configs, experiment specs)::

    # comment
    [section]
    key = value
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from pydantic_settings import BaseSettings

from hspi.errors import ConfigError


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"

    # Oracle service
    HSPI_ORACLE_SEED: int = 0
    HSPI_MAX_BATCH: int = 1024
    HSPI_MAX_MESSAGE_BYTES: int = 256 * 1024 * 1024
    HSPI_HEALTH_PORT: int = 0
    HSPI_CONNECT_TIMEOUT: float = 30.0

    model_config = {"env_file": ".env", "extra": "ignore"}


settings = Settings()


# ═══════════════════════════════════════════════════════════════
# Plain-text config reader
# ═══════════════════════════════════════════════════════════════

@dataclass
class ConfigBlock:
    name: str | None
    line: int
    entries: Dict[str, Tuple[str, int]] = field(default_factory=dict)

    def values(self) -> Dict[str, str]:
        return {k: v for k, (v, _) in self.entries.items()}

    def line_of(self, key: str) -> int:
        return self.entries[key][1] if key in self.entries else self.line


def parse_config_text(text: str) -> List[ConfigBlock]:
    """Split ``text`` into blocks.  Entries before the first header form an unnamed block."""
    blocks: List[ConfigBlock] = []
    current: ConfigBlock | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError("bad-section", f"malformed section header {raw.strip()!r}", lineno)
            current = ConfigBlock(name=line[1:-1].strip(), line=lineno)
            blocks.append(current)
            continue
        if "=" not in line:
            raise ConfigError("bad-entry", f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("bad-entry", "empty key", lineno)
        if current is None:
            current = ConfigBlock(name=None, line=lineno)
            blocks.append(current)
        if key in current.entries:
            raise ConfigError("duplicate-key", f"{key!r} given twice", lineno)
        current.entries[key] = (value, lineno)
    return blocks


def read_config(path: str | Path) -> List[ConfigBlock]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def read_flat_config(path: str | Path) -> ConfigBlock:
    """Read a config that holds exactly one (possibly unnamed) block."""
    blocks = read_config(path)
    if not blocks:
        raise ConfigError("empty-config", f"{path} has no entries")
    if len(blocks) > 1:
        raise ConfigError("bad-section", "expected a single block", blocks[1].line)
    return blocks[0]


def parse_options(text: str) -> Dict[str, str]:
    """``"p=0.1,bits=8"`` → ``{"p": "0.1", "bits": "8"}``."""
    out: Dict[str, str] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError("bad-option", f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out
