"""Run configuration and the error taxonomy shared by the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .corpus import DEFAULT_MAX_TOKENS, DEFAULT_SAMPLE_FRACTION
from .embed import DEFAULT_TRUNCATE_AT
from .evalkit import DEFAULT_KS
from .io import DataFormatError
from .mine import DEFAULT_NEGATIVES


class BenchdiagError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(BenchdiagError):
    exit_code = 2
    kind = "invalid_config"


class MissingInputError(BenchdiagError):
    exit_code = 3
    kind = "missing_input"


class ProviderError(BenchdiagError):
    exit_code = 4
    kind = "provider_failure"


def error_kind(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, BenchdiagError):
        return exc.kind, exc.exit_code
    if isinstance(exc, DataFormatError):
        return "data_format", 5
    return "internal", 1


@dataclass
class RunConfig:
    corpus_dir: str | None = None
    output_dir: str | None = None
    tokenizer: str = "whitespace"
    max_tokens: int = DEFAULT_MAX_TOKENS
    sample_fraction: float = DEFAULT_SAMPLE_FRACTION
    seed: int | None = None
    embedding_provider: str | None = None
    generator: str | None = None
    scoring_mode: str = "cosine"
    n_negatives: int = DEFAULT_NEGATIVES
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    k_min: int = 2
    k_max: int = 30
    truncate_at: int = DEFAULT_TRUNCATE_AT
    concurrency: int = 4
    max_attempts: int = 3

    def validate(self) -> "RunConfig":
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ConfigError("sample_fraction must be in (0, 1]")
        if self.scoring_mode not in ("cosine", "maxsim"):
            raise ConfigError(f"scoring_mode must be cosine or maxsim, got {self.scoring_mode!r}")
        if self.n_negatives < 1:
            raise ConfigError("n_negatives must be >= 1")
        if not self.ks or any(b <= a for a, b in zip(self.ks, self.ks[1:])) or self.ks[0] < 1:
            raise ConfigError("ks must be positive and strictly increasing")
        if self.k_min < 2 or self.k_max < self.k_min:
            raise ConfigError("cluster range must satisfy 2 <= k_min <= k_max")
        if self.truncate_at < 1:
            raise ConfigError("truncate_at must be >= 1")
        if self.concurrency < 1 or self.max_attempts < 1:
            raise ConfigError("concurrency and max_attempts must be >= 1")
        if self.seed is not None and not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        return self

    def require_seed(self, step: str) -> int:
        if self.seed is None:
            raise ConfigError(f"'{step}' is stochastic; pass --seed or set seed in the config file")
        return self.seed

    def merged(self, overrides: dict[str, Any]) -> "RunConfig":
        """Copy with every non-None override applied."""
        known = {f.name for f in dataclasses.fields(self)}
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if k in known and v is not None})


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML mapping of :class:`RunConfig` fields. Unknown keys are rejected."""
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{p}: unknown keys {unknown}")
    try:
        return RunConfig(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
