"""End-to-end answering: retrieve, rerank, resolve commands, prompt, answer.

Prompt templates are versioned here in the repo; every answer records a
digest of the exact prompt it was produced from, so runs are reproducible
and comparable across template changes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

from .commands import (
    CommandRegistry,
    ExecutionPolicy,
    ResolvedContext,
    SandboxPolicy,
    command_chunks,
    resolve_contexts,
)
from .corpus import Chunk
from .gateway import (
    ChatMessage,
    ChatRequest,
    ContextOverflow,
    ModelGateway,
    render_prompt,
)
from .retrieval import VectorIndex, build_index, rerank_candidates, retrieve_topk

logger = logging.getLogger(__name__)

PROMPT_VERSION = "hpcqa-prompts-v1"

ANSWER_SYSTEM_PROMPT = (
    "You are an assistant for users of a high-performance computing cluster. "
    "Answer the user's question using only the context blocks provided. "
    "Blocks tagged [CMD] contain live output of commands just executed on the "
    "cluster; blocks tagged [DOC] quote the cluster documentation. "
    "If the context is not sufficient to answer, say so plainly."
)

COT_INSTRUCTION = (
    "Reason step by step: first list which context blocks are relevant and why, "
    "then derive the answer from them, then state the final answer."
)

NO_CONTEXT_MARKER = "(no context retrieved)"


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    top_k_retrieval: int = 20
    top_k_rerank: int = 5
    prompt_style: str = "plain"  # "plain" | "cot"
    temperature: float = 0.0
    max_output_tokens: int = 4096
    context_token_budget: int = 128_000
    hyce_enabled: bool = True
    max_commands_per_query: int = 2
    chars_per_token: int = 4
    # Off by default: command chunks normally compete with documentation for
    # the same rerank slots. On, the best command candidate takes the last
    # slot whenever none survived re-ranking.
    reserve_command_slot: bool = False

    def __post_init__(self) -> None:
        if self.top_k_retrieval <= 0 or self.top_k_rerank <= 0:
            raise ValueError("top_k values must be positive")
        if self.top_k_rerank > self.top_k_retrieval:
            raise ValueError("top_k_rerank must not exceed top_k_retrieval")
        if self.prompt_style not in ("plain", "cot"):
            raise ValueError("prompt_style must be 'plain' or 'cot'")
        if self.max_output_tokens <= 0 or self.context_token_budget <= 0:
            raise ValueError("token limits must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class AnswerBundle:
    query: str
    answer: str
    contexts: list[ResolvedContext]
    commands_executed: list[str]
    prompt_digest: str
    config_snapshot: PipelineConfig

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "answer": self.answer,
            "contexts": [
                {
                    "chunk_id": c.chunk_id,
                    "kind": c.kind,
                    "text": c.text,
                    "provenance": c.provenance,
                    "command_output": (
                        asdict(c.command_output) if c.command_output else None
                    ),
                }
                for c in self.contexts
            ],
            "commands_executed": list(self.commands_executed),
            "prompt_digest": self.prompt_digest,
            "config_snapshot": asdict(self.config_snapshot),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def _context_block(position: int, context: ResolvedContext) -> str:
    tag = "[CMD]" if context.provenance == "command_execution" else "[DOC]"
    return f"[{position}] {tag} (chunk {context.chunk_id})\n{context.text}"


def build_prompt(
    query: str,
    contexts: Sequence[ResolvedContext],
    style: str = "plain",
    context_token_budget: int = 128_000,
    chars_per_token: int = 4,
    transcript: Sequence[tuple[str, str]] | None = None,
) -> tuple[list[ChatMessage], list[str]]:
    """Assemble the chat messages for one query.

    Contexts appear as numbered blocks in rerank order, every text verbatim.
    If the estimate exceeds the token budget, the lowest-ranked contexts are
    dropped one at a time (returned as the second element); the query alone
    overflowing is an error.
    """
    if style not in ("plain", "cot"):
        raise ValueError("style must be 'plain' or 'cot'")

    def render(kept: Sequence[ResolvedContext]) -> list[ChatMessage]:
        if kept:
            blocks = "\n\n".join(
                _context_block(i + 1, ctx) for i, ctx in enumerate(kept)
            )
        else:
            blocks = NO_CONTEXT_MARKER
        user_text = f"Context:\n{blocks}\n\nQuestion: {query}"
        if style == "cot":
            user_text += "\n\n" + COT_INSTRUCTION
        messages = [ChatMessage(role="system", content=ANSWER_SYSTEM_PROMPT)]
        for role, text in transcript or ():
            messages.append(ChatMessage(role=role, content=text))
        messages.append(ChatMessage(role="user", content=user_text))
        return messages

    kept = list(contexts)
    dropped: list[str] = []
    while True:
        messages = render(kept)
        estimated = len(render_prompt(messages)) // chars_per_token
        if estimated <= context_token_budget:
            return messages, dropped
        if not kept:
            raise ContextOverflow(
                f"query alone estimates {estimated} tokens over budget "
                f"{context_token_budget}"
            )
        victim = kept.pop()
        dropped.append(victim.chunk_id)
        logger.warning("context %s dropped to fit token budget", victim.chunk_id)


def prompt_digest(messages: Sequence[ChatMessage]) -> str:
    canonical = json.dumps(
        [[m.role, m.content] for m in messages], ensure_ascii=False, sort_keys=True
    )
    return hashlib.sha256((PROMPT_VERSION + "\n" + canonical).encode("utf-8")).hexdigest()


def assemble_chunks(
    doc_chunks: Sequence[Chunk], registry: CommandRegistry | None, hyce_enabled: bool
) -> list[Chunk]:
    """The retrievable chunk universe: documentation plus, when the command
    path is on, one description chunk per enabled command."""
    merged = list(doc_chunks)
    if hyce_enabled and registry is not None:
        merged.extend(command_chunks(registry))
    return merged


def answer_query(
    query: str,
    chunks: Sequence[Chunk],
    index: VectorIndex,
    registry: CommandRegistry,
    config: PipelineConfig,
    gateway: ModelGateway,
    sandbox: SandboxPolicy | None = None,
    transcript: Sequence[tuple[str, str]] | None = None,
) -> AnswerBundle:
    """One pass through the five stages for a single query.

    ``index`` must be built over exactly ``chunks``; with the command path
    disabled, callers build both without command chunks so command
    descriptions never compete in retrieval at all.
    """
    lookup = {c.id: c for c in chunks}
    if len(index) == 0:
        contexts: list[ResolvedContext] = []
    else:
        k = min(config.top_k_retrieval, len(index))
        candidates = retrieve_topk(query, index, k, gateway.embed_texts)
        ranked_all = rerank_candidates(
            query, candidates, len(candidates), gateway.rerank_passages, lookup
        )
        ranked = ranked_all[: config.top_k_rerank]
        if config.reserve_command_slot and config.hyce_enabled and ranked:
            def is_command(scored):
                return lookup[scored.chunk_id].kind == "command"

            if not any(is_command(c) for c in ranked):
                overflow_commands = [
                    c for c in ranked_all[config.top_k_rerank :] if is_command(c)
                ]
                if overflow_commands:
                    ranked = ranked[:-1] + [overflow_commands[0]]
        contexts = resolve_contexts(
            ranked,
            lookup,
            registry,
            policy=ExecutionPolicy(max_commands_per_query=config.max_commands_per_query),
            sandbox=sandbox,
            query=query,
        )
    messages, _dropped = build_prompt(
        query,
        contexts,
        style=config.prompt_style,
        context_token_budget=config.context_token_budget,
        chars_per_token=config.chars_per_token,
        transcript=transcript,
    )
    request = ChatRequest(
        messages=messages,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
    )
    answer = gateway.complete_chat(request)
    executed = [
        c.command_output.spec_name
        for c in contexts
        if c.provenance == "command_execution" and c.command_output is not None
    ]
    return AnswerBundle(
        query=query,
        answer=answer,
        contexts=contexts,
        commands_executed=executed,
        prompt_digest=prompt_digest(messages),
        config_snapshot=config,
    )


class RagEngine:
    """Bundles corpus, index, registry, and backends behind one ask() call."""

    def __init__(
        self,
        doc_chunks: Sequence[Chunk],
        registry: CommandRegistry,
        config: PipelineConfig,
        gateway: ModelGateway,
        sandbox: SandboxPolicy | None = None,
        index: VectorIndex | None = None,
    ):
        self.registry = registry
        self.config = config
        self.gateway = gateway
        self.sandbox = sandbox
        self.chunks = assemble_chunks(doc_chunks, registry, config.hyce_enabled)
        if index is not None:
            if set(index.ids()) != {c.id for c in self.chunks}:
                raise PipelineError(
                    "index entries do not match the chunk universe; re-run ingest"
                )
            self.index = index
        elif self.chunks:
            self.index = build_index(self.chunks, gateway.embed_texts)
        else:
            self.index = VectorIndex(dim=1)

    def ask(
        self, query: str, transcript: Sequence[tuple[str, str]] | None = None
    ) -> AnswerBundle:
        return answer_query(
            query,
            self.chunks,
            self.index,
            self.registry,
            self.config,
            self.gateway,
            sandbox=self.sandbox,
            transcript=transcript,
        )
