"""
config.py — Centralised settings for pathrec.

Values come from, highest priority first:
  1. a KEY=value config file passed with --config
  2. PATHREC_* environment variables (and a .env file)
  3. the defaults below
List keys accept comma-separated strings ("20,10,10").
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated, Any, Literal

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, NoDecode, SettingsConfigDict

from kg.errors import ConfigError
from kg.store import RelationExclusion
from models.agent import RewardConfig
from models.embeddings import EmbeddingConfig
from quality.explain import DEFAULT_TEMPLATE
from quality.metrics import METRIC_NAMES
from quality.rerank import RerankConfig

logger = logging.getLogger(__name__)

_AGENT_METRICS = ("lir", "sep", "ptd")


class Settings(BaseSettings):
    """Pipeline-wide configuration."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="PATHREC_",
        case_sensitive=False,
        extra="ignore",
    )

    # ── Run ──────────────────────────────────────────────────────────────
    workdir: Path = Path("./run")
    database_path: Path | None = None   # defaults to <workdir>/pathrec.db
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    seed: int = 0

    # ── Dataset ──────────────────────────────────────────────────────────
    dataset_dir: Path = Path("./data")
    feedback_relation: str = "interacted"
    min_relation_count: int = Field(0, ge=0)
    train_frac: float = Field(0.7, gt=0, lt=1)
    valid_frac: float = Field(0.1, gt=0, lt=1)
    relation_exclusion: RelationExclusion = "directed"

    # ── Quality tables ───────────────────────────────────────────────────
    beta_ir: float = Field(0.3, gt=0, le=1)
    beta_ep: float = Field(0.3, gt=0, le=1)

    # ── Embeddings ───────────────────────────────────────────────────────
    embedding_dim: int = Field(32, ge=2)
    embedding_epochs: int = Field(30, ge=0)
    embedding_lr: float = Field(0.01, ge=0)
    embedding_batch_size: int = Field(256, ge=1)
    negatives_per_positive: int = Field(1, ge=1)
    margin: float = Field(1.0, gt=0)

    # ── Agent (in-processing) ────────────────────────────────────────────
    hop_count: int = Field(3, ge=1)
    prune_sizes: Annotated[tuple[int, ...], NoDecode] = (20, 10, 10)
    agent_alpha: float = Field(0.0, ge=0, le=1)
    agent_metrics: Annotated[tuple[str, ...], NoDecode] = ()
    agent_episodes: int = Field(5000, ge=0)
    agent_lr: float = Field(1e-3, ge=0)
    agent_batch_size: int = Field(32, ge=1)
    discount: float = Field(0.99, ge=0, le=1)
    hidden_size: int = Field(128, ge=1)
    baseline_decay: float = Field(0.9, ge=0, le=1)

    # ── Recommendation / post-processing ─────────────────────────────────
    top_n: int = Field(10, ge=1)
    rerank_alpha: float = Field(0.0, ge=0, le=1)
    rerank_metrics: Annotated[tuple[str, ...], NoDecode] = ("lir",)
    ndcg_budget: float = Field(0.1, ge=0, le=1)
    alpha_grid: Annotated[tuple[float, ...], NoDecode] = tuple(i / 10 for i in range(11))
    explanation_template: str = DEFAULT_TEMPLATE

    @field_validator("workdir", "database_path", "dataset_dir", mode="before")
    @classmethod
    def expand_path(cls, v: str | Path | None) -> Path | None:
        return None if v is None else Path(v).expanduser().resolve()

    @field_validator("prune_sizes", "agent_metrics", "rerank_metrics", "alpha_grid", mode="before")
    @classmethod
    def split_csv(cls, v: Any) -> Any:
        if isinstance(v, str):
            return tuple(part.strip() for part in v.split(",") if part.strip())
        return v

    @field_validator("agent_metrics")
    @classmethod
    def check_agent_metrics(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        bad = [m for m in v if m not in _AGENT_METRICS]
        if bad:
            raise ValueError(f"agent metrics must be among {_AGENT_METRICS}, got {bad}")
        return v

    @field_validator("rerank_metrics")
    @classmethod
    def check_rerank_metrics(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        bad = [m for m in v if m not in METRIC_NAMES]
        if bad:
            raise ValueError(f"rerank metrics must be among {METRIC_NAMES}, got {bad}")
        return v

    @field_validator("alpha_grid")
    @classmethod
    def check_alpha_grid(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0 <= a <= 1 for a in v):
            raise ValueError("alpha_grid values must lie in [0, 1]")
        if 0.0 not in v:
            raise ValueError("alpha_grid must include 0 as the reference")
        return tuple(sorted(set(v)))

    @model_validator(mode="after")
    def check_consistency(self) -> "Settings":
        if self.train_frac + self.valid_frac >= 1:
            raise ValueError("train_frac + valid_frac must be < 1")
        if len(self.prune_sizes) != self.hop_count:
            raise ValueError(
                f"prune_sizes needs {self.hop_count} entries, got {len(self.prune_sizes)}"
            )
        if any(z < 1 for z in self.prune_sizes):
            raise ValueError("prune_sizes must all be >= 1")
        if self.database_path is None:
            self.database_path = self.workdir / "pathrec.db"
        return self

    # ── Typed views for the algorithms ───────────────────────────────────
    def reward_config(self) -> RewardConfig:
        return RewardConfig(
            alpha=self.agent_alpha,
            metrics=self.agent_metrics,
            hop_count=self.hop_count,
            prune_sizes=self.prune_sizes,
            relation_exclusion=self.relation_exclusion,
        )

    def rerank_config(self, alpha: float | None = None) -> RerankConfig:
        return RerankConfig(
            alpha=self.rerank_alpha if alpha is None else alpha,
            metrics=self.rerank_metrics,
            n=self.top_n,
        )

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(
            dim=self.embedding_dim,
            epochs=self.embedding_epochs,
            lr=self.embedding_lr,
            negatives_per_positive=self.negatives_per_positive,
            margin=self.margin,
            batch_size=self.embedding_batch_size,
        )

    def resolved(self) -> dict[str, Any]:
        """JSON-safe snapshot recorded next to every artifact."""
        return self.model_dump(mode="json")

    def configure_logging(self) -> None:
        logging.basicConfig(
            level=self.log_level,
            format="%(asctime)s  %(levelname)-8s  %(name)s — %(message)s",
            datefmt="%H:%M:%S",
        )


def load_settings(config_file: str | Path | None = None, **overrides: Any) -> Settings:
    """
    Build Settings from a config file plus keyword overrides (CLI flags).
    Unknown keys in the file are rejected.
    """
    values: dict[str, Any] = {}
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        raw = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None}
        unknown = sorted(set(raw) - set(Settings.model_fields))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{loc}: {first['msg']}") from exc
