"""Registry of described shell commands, sandboxed execution, and context
resolution for retrieved command chunks.

Security model: the registry is the sole source of executable actions.
Commands are fixed argv vectors, never touched by queries, chunk texts, or
model output, and never interpreted by a shell. Retrieval works on a
command's natural-language description; execution looks the command up by
name in the loaded registry at call time, runs it with a reduced environment
in a sandbox directory, kills it at its timeout, and truncates its output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import signal
import subprocess
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import yaml

from .corpus import Chunk
from .retrieval import ScoredChunk

logger = logging.getLogger(__name__)

COMMAND_CHUNK_PREFIX = "cmd:"
DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_MAX_OUTPUT_BYTES = 16_384
DEFAULT_ENV_ALLOWLIST = ("PATH", "HOME", "LANG")
DEFAULT_SCHEDULING_SLACK_MS = 500
DEFAULT_MAX_COMMANDS_PER_QUERY = 2
DEFAULT_GLOBAL_PROCESS_CAP = 4
TRUNCATION_MARKER = "\n[output truncated]"

# Anything that smells like runtime substitution is rejected at load time:
# template braces, shell command substitution, backticks, variable expansion.
_PLACEHOLDER_RE = re.compile(r"\{[^{}]*\}|\$\(|`|\$\{")


class CommandError(Exception):
    pass


class ParseError(CommandError):
    pass


class DuplicateName(CommandError):
    pass


class InvalidSpec(CommandError):
    pass


class NotInRegistry(CommandError):
    pass


class Disabled(CommandError):
    pass


class SpawnError(CommandError):
    pass


class Timeout(CommandError):
    """Command exceeded its timeout. Partial output rides on ``.partial``."""

    def __init__(self, message: str, partial: "CommandOutput"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class CommandSpec:
    name: str
    argv: tuple[str, ...]
    description: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.name:
            raise InvalidSpec("spec name must be non-empty")
        if not self.argv:
            raise InvalidSpec(f"{self.name}: argv must be non-empty")
        if not self.description:
            raise InvalidSpec(f"{self.name}: description must be non-empty")
        if self.description.strip() == " ".join(self.argv):
            raise InvalidSpec(f"{self.name}: description must differ from the raw command")
        if self.timeout_ms <= 0:
            raise InvalidSpec(f"{self.name}: timeout_ms must be positive")
        if self.max_output_bytes <= 0:
            raise InvalidSpec(f"{self.name}: max_output_bytes must be positive")
        for token in self.argv:
            if _PLACEHOLDER_RE.search(token):
                raise InvalidSpec(
                    f"{self.name}: argv token {token!r} contains placeholder syntax"
                )


@dataclass(frozen=True)
class CommandOutput:
    spec_name: str
    exit_code: int
    stdout: str
    stderr: str
    truncated: bool
    duration_ms: int
    decode_replaced: bool = False


@dataclass(frozen=True)
class ResolvedContext:
    chunk_id: str
    kind: str
    text: str
    provenance: str  # "document" | "command_execution"
    command_output: CommandOutput | None = None

    def __post_init__(self) -> None:
        if (self.provenance == "command_execution") != (self.command_output is not None):
            raise ValueError("command_output present iff provenance is command_execution")


class CommandRegistry:
    """Immutable name -> CommandSpec map; the executable allowlist."""

    def __init__(self, specs: Sequence[CommandSpec]):
        self._specs: dict[str, CommandSpec] = {}
        for spec in specs:
            if spec.name in self._specs:
                raise DuplicateName(f"duplicate command name: {spec.name}")
            self._specs[spec.name] = spec

    def __len__(self) -> int:
        return len(self._specs)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def get(self, name: str) -> CommandSpec:
        if name not in self._specs:
            raise NotInRegistry(f"command not in registry: {name}")
        return self._specs[name]

    def all_specs(self) -> list[CommandSpec]:
        return list(self._specs.values())

    def enabled_specs(self) -> list[CommandSpec]:
        return [s for s in self._specs.values() if s.enabled]

    def enabled_argv_set(self) -> set[tuple[str, ...]]:
        return {s.argv for s in self.enabled_specs()}


def load_registry(path: str | Path) -> CommandRegistry:
    """Load a YAML or JSON list of command specs (YAML parses both)."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read registry {path}: {exc}") from exc
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ParseError(f"registry {path} does not parse: {exc}") from exc
    if not isinstance(data, list):
        raise ParseError(f"registry {path} must be a list of command specs")
    specs = []
    for row in data:
        if not isinstance(row, dict):
            raise ParseError(f"registry entry is not a mapping: {row!r}")
        try:
            specs.append(
                CommandSpec(
                    name=row.get("name", ""),
                    argv=tuple(row.get("argv", ())),
                    description=row.get("description", ""),
                    timeout_ms=row.get("timeout_ms", DEFAULT_TIMEOUT_MS),
                    max_output_bytes=row.get("max_output_bytes", DEFAULT_MAX_OUTPUT_BYTES),
                    enabled=bool(row.get("enabled", True)),
                )
            )
        except TypeError as exc:
            raise ParseError(f"registry entry malformed: {row!r} ({exc})") from exc
    return CommandRegistry(specs)


def command_chunks(registry: CommandRegistry) -> list[Chunk]:
    """One retrievable chunk per enabled command, carrying the description
    (never the argv) as text."""
    return [
        Chunk(
            id=COMMAND_CHUNK_PREFIX + spec.name,
            doc_id=COMMAND_CHUNK_PREFIX + spec.name,
            ordinal=0,
            text=spec.description,
            kind="command",
        )
        for spec in registry.enabled_specs()
    ]


def spec_name_for_chunk(chunk_id: str) -> str | None:
    if chunk_id.startswith(COMMAND_CHUNK_PREFIX):
        return chunk_id[len(COMMAND_CHUNK_PREFIX) :]
    return None


@dataclass
class SandboxPolicy:
    """Where and how child processes run."""

    work_dir: str | Path = "."
    env_allowlist: tuple[str, ...] = DEFAULT_ENV_ALLOWLIST
    scheduling_slack_ms: int = DEFAULT_SCHEDULING_SLACK_MS
    audit_path: str | Path | None = None


@dataclass
class ExecutionPolicy:
    max_commands_per_query: int = DEFAULT_MAX_COMMANDS_PER_QUERY


# Executions across all queries share one process-count cap.
_process_slots = threading.BoundedSemaphore(DEFAULT_GLOBAL_PROCESS_CAP)
_audit_lock = threading.Lock()


def _append_exec_audit(policy: SandboxPolicy, record: dict) -> None:
    if policy.audit_path is None:
        return
    line = json.dumps(record, sort_keys=True, ensure_ascii=False)
    with _audit_lock:
        with open(policy.audit_path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")


def _decode(raw: bytes) -> tuple[str, bool]:
    try:
        return raw.decode("utf-8"), False
    except UnicodeDecodeError:
        return raw.decode("utf-8", errors="replace"), True


def _truncate(stdout_raw: bytes, stderr_raw: bytes, limit: int) -> tuple[bytes, bytes, bool]:
    total = len(stdout_raw) + len(stderr_raw)
    if total <= limit:
        return stdout_raw, stderr_raw, False
    kept_stdout = stdout_raw[:limit]
    kept_stderr = stderr_raw[: limit - len(kept_stdout)]
    return kept_stdout, kept_stderr, True


def execute_command(
    spec: CommandSpec | str,
    registry: CommandRegistry,
    sandbox: SandboxPolicy,
    query_digest: str = "",
) -> CommandOutput:
    """Run one registered command and capture its output.

    Execution always resolves the spec by name through the registry, so a
    mutated value copy can never run; the spawned argv is the registry's argv
    token for token, recorded verbatim in the execution audit log.
    """
    name = spec if isinstance(spec, str) else spec.name
    registered = registry.get(name)  # raises NotInRegistry
    if not registered.enabled:
        raise Disabled(f"command is disabled: {name}")

    env = {
        key: os.environ[key] for key in sandbox.env_allowlist if key in os.environ
    }
    argv = list(registered.argv)
    started = time.monotonic()
    with _process_slots:
        try:
            proc = subprocess.Popen(
                argv,
                shell=False,
                cwd=str(sandbox.work_dir),
                env=env,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
            )
        except OSError as exc:
            raise SpawnError(f"cannot spawn {name}: {exc}") from exc
        timed_out = False
        try:
            stdout_raw, stderr_raw = proc.communicate(timeout=registered.timeout_ms / 1000.0)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                proc.kill()
            stdout_raw, stderr_raw = proc.communicate()
    duration_ms = int((time.monotonic() - started) * 1000)

    stdout_raw = stdout_raw or b""
    stderr_raw = stderr_raw or b""
    stdout_kept, stderr_kept, truncated = _truncate(
        stdout_raw, stderr_raw, registered.max_output_bytes
    )
    stdout_text, replaced_out = _decode(stdout_kept)
    stderr_text, replaced_err = _decode(stderr_kept)
    if truncated:
        stdout_text += TRUNCATION_MARKER

    output = CommandOutput(
        spec_name=name,
        exit_code=proc.returncode,
        stdout=stdout_text,
        stderr=stderr_text,
        truncated=truncated,
        duration_ms=duration_ms,
        decode_replaced=replaced_out or replaced_err,
    )
    _append_exec_audit(
        sandbox,
        {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "query_digest": query_digest,
            "spec_name": name,
            "argv": argv,
            "exit_code": proc.returncode,
            "duration_ms": duration_ms,
            "truncated": truncated,
            "timed_out": timed_out,
        },
    )
    if timed_out:
        raise Timeout(
            f"{name} exceeded {registered.timeout_ms} ms (killed after {duration_ms} ms)",
            partial=output,
        )
    return output


def render_command_context(spec: CommandSpec, output: CommandOutput) -> str:
    lines = [
        f"Command `{spec.name}` (executed, exit code {output.exit_code}):",
        spec.description,
        "```",
        output.stdout.rstrip("\n"),
    ]
    if output.stderr.strip():
        lines.append(f"[stderr] {output.stderr.rstrip()}")
    lines.append("```")
    return "\n".join(lines)


def render_command_failure(spec: CommandSpec, reason: str) -> str:
    return (
        f"Command `{spec.name}` could not be executed ({reason}). "
        f"Its purpose: {spec.description}"
    )


def render_command_skipped(spec: CommandSpec) -> str:
    return (
        f"Command `{spec.name}` (not executed, per-query command budget reached). "
        f"Its purpose: {spec.description}"
    )


def resolve_contexts(
    ranked: Sequence[ScoredChunk],
    chunks: dict[str, Chunk],
    registry: CommandRegistry,
    policy: ExecutionPolicy | None = None,
    sandbox: SandboxPolicy | None = None,
    query: str = "",
) -> list[ResolvedContext]:
    """Turn the reranked chunk list into model context, executing command
    chunks highest-ranked first up to the per-query cap.

    Failures never surface to the caller: a failed or skipped command becomes
    a context block describing what happened, so the model can explain the
    situation instead of the pipeline crashing.
    """
    policy = policy or ExecutionPolicy()
    sandbox = sandbox or SandboxPolicy()
    query_digest = hashlib.sha256(query.encode("utf-8")).hexdigest()
    resolved: list[ResolvedContext] = []
    executed = 0
    for candidate in ranked:
        chunk = chunks.get(candidate.chunk_id)
        if chunk is None:
            logger.warning("ranked chunk missing from lookup: %s", candidate.chunk_id)
            continue
        name = spec_name_for_chunk(chunk.id)
        if chunk.kind != "command" or name is None:
            resolved.append(
                ResolvedContext(
                    chunk_id=chunk.id, kind=chunk.kind, text=chunk.text, provenance="document"
                )
            )
            continue
        try:
            spec = registry.get(name)
        except NotInRegistry:
            resolved.append(
                ResolvedContext(
                    chunk_id=chunk.id,
                    kind=chunk.kind,
                    text=f"Command `{name}` is no longer registered. {chunk.text}",
                    provenance="document",
                )
            )
            continue
        if executed >= policy.max_commands_per_query:
            resolved.append(
                ResolvedContext(
                    chunk_id=chunk.id,
                    kind=chunk.kind,
                    text=render_command_skipped(spec),
                    provenance="document",
                )
            )
            continue
        executed += 1
        try:
            output = execute_command(spec, registry, sandbox, query_digest=query_digest)
            text = render_command_context(spec, output)
        except Timeout as exc:
            output = exc.partial
            text = render_command_failure(spec, f"timed out after {output.duration_ms} ms")
        except (Disabled, SpawnError) as exc:
            output = None
            text = render_command_failure(spec, str(exc))
        if output is not None:
            resolved.append(
                ResolvedContext(
                    chunk_id=chunk.id,
                    kind=chunk.kind,
                    text=text,
                    provenance="command_execution",
                    command_output=output,
                )
            )
        else:
            resolved.append(
                ResolvedContext(
                    chunk_id=chunk.id, kind=chunk.kind, text=text, provenance="document"
                )
            )
    return resolved
