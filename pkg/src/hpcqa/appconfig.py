"""Application configuration: one YAML (or JSON) file describing paths,
backend selection, pipeline knobs, and service binding.

Environment variables override the wire-level settings so deployments can
repoint a config without editing it:

  HPCQA_ENDPOINT_URL  -> backend.endpoint_url
  HPCQA_API_KEY_ENV   -> backend.api_key_env_name
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .commands import SandboxPolicy
from .gateway import (
    DEFAULT_OFFLINE_DIM,
    BackendProfile,
    ModelGateway,
    http_gateway,
    offline_gateway,
)
from .pipeline import PipelineConfig

ENV_ENDPOINT_URL = "HPCQA_ENDPOINT_URL"
ENV_API_KEY_ENV = "HPCQA_API_KEY_ENV"


class ConfigError(Exception):
    pass


@dataclass
class BackendConfig:
    mode: str = "offline"  # "offline" | "http"
    seed: int = 0
    dim: int = DEFAULT_OFFLINE_DIM
    script: list[tuple[str, str]] = field(default_factory=list)
    endpoint_url: str = "http://localhost:8000/v1"
    api_key_env_name: str = "HPCQA_API_KEY"
    chat_model: str = "meta/llama-3.1-405b-instruct"
    embed_model: str = "nvidia/llama-3.2-nv-embedqa-1b-v1"
    rerank_model: str = "nvidia/llama-3.2-nv-rerankqa-1b-v1"


@dataclass
class AppConfig:
    docs_dir: str = "docs"
    registry_path: str = "registry.yaml"
    corpus_path: str = "artifacts/corpus.json"
    index_path: str = "artifacts/index.json"
    artifacts_dir: str = "artifacts"
    sandbox_dir: str = "."
    gateway_audit_path: str | None = None
    exec_audit_path: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    host: str = "127.0.0.1"
    port: int = 8080

    def sanitized(self) -> dict:
        """Config view safe to expose over HTTP: names and knobs, no secrets
        (the key itself never lives in the config to begin with)."""
        return {
            "docs_dir": self.docs_dir,
            "registry_path": self.registry_path,
            "corpus_path": self.corpus_path,
            "index_path": self.index_path,
            "backend_mode": self.backend.mode,
            "chat_model": self.backend.chat_model,
            "embed_model": self.backend.embed_model,
            "rerank_model": self.backend.rerank_model,
            "pipeline": {
                "top_k_retrieval": self.pipeline.top_k_retrieval,
                "top_k_rerank": self.pipeline.top_k_rerank,
                "prompt_style": self.pipeline.prompt_style,
                "hyce_enabled": self.pipeline.hyce_enabled,
                "max_commands_per_query": self.pipeline.max_commands_per_query,
            },
        }


def _as_script(raw) -> list[tuple[str, str]]:
    script: list[tuple[str, str]] = []
    for entry in raw or []:
        if isinstance(entry, dict):
            script.append((entry.get("matcher", ""), entry.get("reply", "")))
        else:
            matcher, reply = entry
            script.append((str(matcher), str(reply)))
    return script


def load_config(path: str | Path) -> AppConfig:
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")

    base = config_path.parent

    def resolve(value: str) -> str:
        p = Path(value)
        return str(p if p.is_absolute() else base / p)

    backend_raw = data.get("backend", {}) or {}
    backend = BackendConfig(
        mode=backend_raw.get("mode", "offline"),
        seed=int(backend_raw.get("seed", 0)),
        dim=int(backend_raw.get("dim", DEFAULT_OFFLINE_DIM)),
        script=_as_script(backend_raw.get("script")),
        endpoint_url=os.environ.get(
            ENV_ENDPOINT_URL, backend_raw.get("endpoint_url", "http://localhost:8000/v1")
        ),
        api_key_env_name=os.environ.get(
            ENV_API_KEY_ENV, backend_raw.get("api_key_env_name", "HPCQA_API_KEY")
        ),
        chat_model=backend_raw.get("chat_model", "meta/llama-3.1-405b-instruct"),
        embed_model=backend_raw.get("embed_model", "nvidia/llama-3.2-nv-embedqa-1b-v1"),
        rerank_model=backend_raw.get("rerank_model", "nvidia/llama-3.2-nv-rerankqa-1b-v1"),
    )
    if backend.mode not in ("offline", "http"):
        raise ConfigError(f"backend.mode must be offline or http, got {backend.mode!r}")

    pipeline_raw = data.get("pipeline", {}) or {}
    try:
        pipeline = PipelineConfig(**pipeline_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad pipeline settings: {exc}") from exc

    service_raw = data.get("service", {}) or {}
    audit_raw = data.get("audit", {}) or {}
    return AppConfig(
        docs_dir=resolve(data.get("docs_dir", "docs")),
        registry_path=resolve(data.get("registry_path", "registry.yaml")),
        corpus_path=resolve(data.get("corpus_path", "artifacts/corpus.json")),
        index_path=resolve(data.get("index_path", "artifacts/index.json")),
        artifacts_dir=resolve(data.get("artifacts_dir", "artifacts")),
        sandbox_dir=resolve(data.get("sandbox_dir", ".")),
        gateway_audit_path=(
            resolve(audit_raw["gateway_log"]) if audit_raw.get("gateway_log") else None
        ),
        exec_audit_path=(
            resolve(audit_raw["exec_log"]) if audit_raw.get("exec_log") else None
        ),
        backend=backend,
        pipeline=pipeline,
        host=service_raw.get("host", "127.0.0.1"),
        port=int(service_raw.get("port", 8080)),
    )


def make_gateway(config: AppConfig) -> ModelGateway:
    if config.backend.mode == "offline":
        return offline_gateway(
            seed=config.backend.seed,
            script=config.backend.script,
            dim=config.backend.dim,
            audit_path=config.gateway_audit_path,
            context_token_budget=config.pipeline.context_token_budget,
            chars_per_token=config.pipeline.chars_per_token,
        )
    profile = BackendProfile(
        endpoint_url=config.backend.endpoint_url,
        api_key_env_name=config.backend.api_key_env_name,
        chat_model=config.backend.chat_model,
        embed_model=config.backend.embed_model,
        rerank_model=config.backend.rerank_model,
    )
    return http_gateway(
        profile,
        audit_path=config.gateway_audit_path,
        context_token_budget=config.pipeline.context_token_budget,
        chars_per_token=config.pipeline.chars_per_token,
    )


def make_sandbox(config: AppConfig) -> SandboxPolicy:
    return SandboxPolicy(
        work_dir=config.sandbox_dir,
        audit_path=config.exec_audit_path,
    )
