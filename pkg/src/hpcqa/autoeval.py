"""Automatic self-evaluation: synthetic Q&A generation, filtering, answering,
reference-based judging, and incremental score reports.

All model outputs are parsed conservatively: rater and judge replies must
contain labeled binary lines, anything unparseable scores zero, and the raw
reply is kept for inspection. Stage artifacts are JSON-lines files whose
first line is a header record; rows below it are written in qa_id order and
are byte-deterministic for a fixed seed under offline backends.

Parsing contracts (exact regexes used):
  Q&A block:   ```qa ... ``` fenced block containing lines
               ``question: <text>`` then ``answer: <text...>``
  filter bits: ``groundedness: 0|1``, ``relevance: 0|1``, ``standalone: 0|1``
               (case-insensitive, ``=`` accepted for ``:``)
  judge bits:  ``correctness: 0|1``, ``faithfulness: 0|1`` (same tolerance)
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .commands import CommandRegistry, CommandSpec, SandboxPolicy, Timeout, execute_command
from .corpus import Chunk
from .gateway import ChatMessage, ChatRequest, GatewayError, ModelGateway
from .pipeline import RagEngine

logger = logging.getLogger(__name__)

ARTIFACT_SCHEMA_VERSION = 1


class AutoevalError(Exception):
    pass


class InsufficientChunks(AutoevalError):
    pass


class EmptySet(AutoevalError):
    pass


class MissingArtifact(AutoevalError):
    pass


@dataclass(frozen=True)
class QAPair:
    id: str
    question: str
    reference_answer: str
    source_chunk_id: str
    origin: str  # "documentation" | "command"
    command_output_digest: str | None = None


@dataclass(frozen=True)
class FilterVerdict:
    qa_id: str
    groundedness: int
    relevance: int
    standalone: int
    rater_raw: str

    def keeps(self) -> bool:
        return self.groundedness == 1 and self.relevance == 1 and self.standalone == 1


@dataclass(frozen=True)
class PredictedRecord:
    qa_id: str
    config_label: str
    predicted_answer: str
    error: str | None = None


@dataclass(frozen=True)
class JudgedRecord:
    qa_id: str
    predicted_answer: str
    correctness: int
    faithfulness: int
    judge_raw: str
    config_label: str


@dataclass(frozen=True)
class EvalScore:
    config_label: str
    numerator: int
    denominator: int
    percent: float
    breakdown: dict[str, float]


# ---------------------------------------------------------------------------
# Prompts and parsers
# ---------------------------------------------------------------------------

QA_GENERATION_PROMPT = """\
Write one question an HPC cluster user might ask, answerable from the material
below, together with its answer. Reply with exactly one fenced block:

```qa
question: <the question, one line>
answer: <the answer>
```

Material:
{material}
"""

FILTER_PROMPT = """\
Rate the following question/answer pair against its source material. Reply with
exactly three lines, each scored 1 (pass) or 0 (fail):

groundedness: <1 if the question is answerable unambiguously from the source material>
relevance: <1 if the question reflects a practical issue HPC users actually hit>
standalone: <1 if the question is understandable without extra background>

Source material:
{material}

Question: {question}
Answer: {answer}
"""

JUDGE_PROMPT = """\
Compare the predicted answer with the reference answer for the question below.
Reply with exactly two lines, each scored 1 (pass) or 0 (fail):

correctness: <1 if the predicted answer accurately matches the reference answer>
faithfulness: <1 if the predicted answer is free from errors, does not hallucinate, and stays within the source material>

Question: {question}
Reference answer: {reference}
Predicted answer: {predicted}

Source material:
{material}
"""

_QA_BLOCK_RE = re.compile(r"```(?:qa)?[ \t]*\n(.*?)```", re.DOTALL)
_QUESTION_RE = re.compile(r"^question\s*[:=]\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_ANSWER_RE = re.compile(r"^answer\s*[:=]\s*(.+)", re.IGNORECASE | re.MULTILINE | re.DOTALL)


def parse_qa_block(text: str) -> tuple[str, str] | None:
    match = _QA_BLOCK_RE.search(text)
    body = match.group(1) if match else text
    q_match = _QUESTION_RE.search(body)
    a_match = _ANSWER_RE.search(body)
    if not q_match or not a_match:
        return None
    question = q_match.group(1).strip()
    answer = a_match.group(1).strip()
    if not question or not answer:
        return None
    return question, answer


def _parse_bit(label: str, text: str) -> int | None:
    # The digit must stand alone: "groundedness: 11" is malformed, not a pass.
    match = re.search(rf"\b{label}\s*[:=]\s*([01])(?!\d)", text, re.IGNORECASE)
    return int(match.group(1)) if match else None


def parse_filter_reply(text: str) -> tuple[int, int, int] | None:
    bits = tuple(_parse_bit(label, text) for label in ("groundedness", "relevance", "standalone"))
    if any(b is None for b in bits):
        return None
    return bits  # type: ignore[return-value]


def parse_judge_reply(text: str) -> tuple[int, int] | None:
    bits = tuple(_parse_bit(label, text) for label in ("correctness", "faithfulness"))
    if any(b is None for b in bits):
        return None
    return bits  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Stage 1: generation
# ---------------------------------------------------------------------------


def _sample_cycling(items: list, n: int, rng: random.Random) -> list:
    """Uniform sample without replacement; cycles (reshuffling) when n exceeds
    the population."""
    if n <= len(items):
        return rng.sample(items, n)
    out: list = []
    while len(out) < n:
        cycle = list(items)
        rng.shuffle(cycle)
        out.extend(cycle)
    return out[:n]


def _ask(gateway: ModelGateway, prompt: str) -> str:
    return gateway.complete_chat(
        ChatRequest(messages=[ChatMessage(role="user", content=prompt)])
    )


def _generate_one(gateway: ModelGateway, material: str) -> tuple[str, str] | None:
    prompt = QA_GENERATION_PROMPT.format(material=material)
    for _attempt in range(2):  # one retry on unparseable output
        try:
            reply = _ask(gateway, prompt)
        except GatewayError as exc:
            logger.warning("generation call failed: %s", exc)
            continue
        parsed = parse_qa_block(reply)
        if parsed is not None:
            return parsed
    return None


def generate_qa(
    chunks: Sequence[Chunk],
    n_doc: int,
    n_cmd: int,
    gateway: ModelGateway,
    registry: CommandRegistry | None = None,
    seed: int = 0,
    sandbox: SandboxPolicy | None = None,
) -> list[QAPair]:
    """Generate n_doc pairs from documentation chunks and n_cmd pairs from
    command descriptions plus fresh execution output.

    Unparseable generations are retried once, then skipped; the result may
    therefore be shorter than requested (the deficit is logged and visible in
    artifact headers as requested vs produced counts).
    """
    if n_doc < 0 or n_cmd < 0:
        raise ValueError("pair counts must be non-negative")
    doc_chunks = [c for c in chunks if c.kind == "documentation"]
    if n_doc > 0 and not doc_chunks:
        raise InsufficientChunks("no documentation chunks to generate from")
    specs: list[CommandSpec] = registry.enabled_specs() if registry else []
    if n_cmd > 0 and not specs:
        raise InsufficientChunks("no enabled commands to generate from")

    rng = random.Random(seed)
    pairs: list[QAPair] = []
    counter = 0

    for chunk in _sample_cycling(doc_chunks, n_doc, rng):
        counter += 1
        parsed = _generate_one(gateway, chunk.text)
        if parsed is None:
            logger.warning("skipping unparseable doc generation for %s", chunk.id)
            continue
        question, answer = parsed
        pairs.append(
            QAPair(
                id=f"qa-{counter:04d}",
                question=question,
                reference_answer=answer,
                source_chunk_id=chunk.id,
                origin="documentation",
            )
        )

    for spec in _sample_cycling(specs, n_cmd, rng):
        counter += 1
        try:
            output = execute_command(spec, registry, sandbox or SandboxPolicy())
            output_text = output.stdout + (("\n" + output.stderr) if output.stderr else "")
        except Timeout as exc:
            output_text = exc.partial.stdout + "\n[command timed out]"
        material = (
            f"Command `{spec.name}`: {spec.description}\n"
            f"Output of running it just now:\n{output_text}"
        )
        parsed = _generate_one(gateway, material)
        if parsed is None:
            logger.warning("skipping unparseable command generation for %s", spec.name)
            continue
        question, answer = parsed
        pairs.append(
            QAPair(
                id=f"qa-{counter:04d}",
                question=question,
                reference_answer=answer,
                source_chunk_id=f"cmd:{spec.name}",
                origin="command",
                command_output_digest=hashlib.sha256(
                    output_text.encode("utf-8")
                ).hexdigest(),
            )
        )

    produced_doc = sum(1 for p in pairs if p.origin == "documentation")
    produced_cmd = sum(1 for p in pairs if p.origin == "command")
    if produced_doc != n_doc or produced_cmd != n_cmd:
        logger.warning(
            "generation deficit: doc %d/%d, command %d/%d",
            produced_doc, n_doc, produced_cmd, n_cmd,
        )
    return pairs


# ---------------------------------------------------------------------------
# Stage 2: filtering
# ---------------------------------------------------------------------------


def filter_qa(
    pairs: Sequence[QAPair],
    chunks: Mapping[str, Chunk],
    gateway: ModelGateway,
) -> tuple[list[QAPair], list[FilterVerdict]]:
    """Keep exactly the pairs the rater scores 1 on all three criteria.

    An unparseable rater reply is a conservative reject: all three bits zero,
    raw reply preserved in the verdict.
    """
    kept: list[QAPair] = []
    verdicts: list[FilterVerdict] = []
    for pair in pairs:
        source = chunks.get(pair.source_chunk_id)
        material = source.text if source else "(source chunk unavailable)"
        prompt = FILTER_PROMPT.format(
            material=material, question=pair.question, answer=pair.reference_answer
        )
        raw = _ask(gateway, prompt)
        parsed = parse_filter_reply(raw)
        bits = parsed if parsed is not None else (0, 0, 0)
        verdict = FilterVerdict(
            qa_id=pair.id,
            groundedness=bits[0],
            relevance=bits[1],
            standalone=bits[2],
            rater_raw=raw,
        )
        verdicts.append(verdict)
        if verdict.keeps():
            kept.append(pair)
    return kept, verdicts


# ---------------------------------------------------------------------------
# Stage 3: predicted answers
# ---------------------------------------------------------------------------


def run_rag_on_set(
    pairs: Sequence[QAPair],
    engines: Mapping[str, RagEngine],
) -> list[PredictedRecord]:
    """Answer every kept pair under every named pipeline configuration.

    Command-origin questions run with live execution, exactly as deployment
    would. Per-pair failures become empty answers with an error note; the run
    never aborts.
    """
    records: list[PredictedRecord] = []
    for label, engine in engines.items():
        for pair in pairs:
            try:
                bundle = engine.ask(pair.question)
                records.append(
                    PredictedRecord(
                        qa_id=pair.id,
                        config_label=label,
                        predicted_answer=bundle.answer,
                    )
                )
            except Exception as exc:  # per-pair failures must not abort the run
                logger.warning("answering %s under %s failed: %s", pair.id, label, exc)
                records.append(
                    PredictedRecord(
                        qa_id=pair.id,
                        config_label=label,
                        predicted_answer="",
                        error=f"{exc.__class__.__name__}: {exc}",
                    )
                )
    return records


# ---------------------------------------------------------------------------
# Stage 4: judging
# ---------------------------------------------------------------------------


def judge(
    records: Sequence[PredictedRecord],
    pairs: Mapping[str, QAPair],
    chunks: Mapping[str, Chunk],
    gateway: ModelGateway,
) -> list[JudgedRecord]:
    """Score each predicted answer against its reference, binary per criterion.

    Empty predictions score (0, 0) without consulting the judge; unparseable
    judge replies also score (0, 0) with the raw reply preserved.
    """
    judged: list[JudgedRecord] = []
    for record in records:
        pair = pairs.get(record.qa_id)
        if pair is None:
            raise AutoevalError(f"prediction references unknown pair: {record.qa_id}")
        if not record.predicted_answer.strip():
            judged.append(
                JudgedRecord(
                    qa_id=record.qa_id,
                    predicted_answer=record.predicted_answer,
                    correctness=0,
                    faithfulness=0,
                    judge_raw="(not judged: empty prediction)",
                    config_label=record.config_label,
                )
            )
            continue
        source = chunks.get(pair.source_chunk_id)
        material = source.text if source else "(source chunk unavailable)"
        prompt = JUDGE_PROMPT.format(
            question=pair.question,
            reference=pair.reference_answer,
            predicted=record.predicted_answer,
            material=material,
        )
        raw = _ask(gateway, prompt)
        parsed = parse_judge_reply(raw)
        bits = parsed if parsed is not None else (0, 0)
        judged.append(
            JudgedRecord(
                qa_id=record.qa_id,
                predicted_answer=record.predicted_answer,
                correctness=bits[0],
                faithfulness=bits[1],
                judge_raw=raw,
                config_label=record.config_label,
            )
        )
    return judged


# ---------------------------------------------------------------------------
# Stage 5: scoring and report
# ---------------------------------------------------------------------------


def _round2(value: Decimal) -> float:
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def score(judged: Sequence[JudgedRecord], mode: str = "both_criteria") -> EvalScore:
    """Aggregate judged records into one percentage.

    Default counts a record as passing only when correctness AND faithfulness
    are both 1 (the strictest reading); ``correctness_only`` is available for
    sensitivity analysis. Per-criterion fractions are always reported.
    """
    if mode not in ("both_criteria", "correctness_only"):
        raise ValueError("mode must be 'both_criteria' or 'correctness_only'")
    if not judged:
        raise EmptySet("no judged records to score")
    denominator = len(judged)
    if mode == "both_criteria":
        numerator = sum(1 for r in judged if r.correctness == 1 and r.faithfulness == 1)
    else:
        numerator = sum(1 for r in judged if r.correctness == 1)
    labels = {r.config_label for r in judged}
    label = labels.pop() if len(labels) == 1 else "mixed"
    return EvalScore(
        config_label=label,
        numerator=numerator,
        denominator=denominator,
        percent=_round2(Decimal(numerator * 100) / Decimal(denominator)),
        breakdown={
            "correctness": sum(r.correctness for r in judged) / denominator,
            "faithfulness": sum(r.faithfulness for r in judged) / denominator,
        },
    )


def incremental_report(scores: Sequence[EvalScore]) -> tuple[str, dict]:
    """Rows in the given order with each row's score delta over the previous.

    Returns the aligned text table and a machine-readable dict with the same
    rows.
    """
    if not scores:
        raise EmptySet("no scores to report")
    rows = []
    previous: float | None = None
    for entry in scores:
        delta = None if previous is None else _round2(
            Decimal(str(entry.percent)) - Decimal(str(previous))
        )
        rows.append(
            {
                "config_label": entry.config_label,
                "eval_score_percent": entry.percent,
                "delta_percent": delta,
                "numerator": entry.numerator,
                "denominator": entry.denominator,
                "breakdown": entry.breakdown,
            }
        )
        previous = entry.percent

    label_width = max(len("Changes"), *(len(r["config_label"]) for r in rows))
    lines = [
        f"{'Changes'.ljust(label_width)}  {'Eval Score':>12}  {'ΔEval Score':>12}",
        f"{'-' * label_width}  {'-' * 12}  {'-' * 12}",
    ]
    for row in rows:
        delta_text = "-" if row["delta_percent"] is None else f"{row['delta_percent']:.2f}"
        lines.append(
            f"{row['config_label'].ljust(label_width)}  "
            f"{row['eval_score_percent']:>11.2f}%  {delta_text:>12}"
        )
    table = "\n".join(lines)
    return table, {"rows": rows}


# ---------------------------------------------------------------------------
# Stage artifacts (JSON-lines with a header record)
# ---------------------------------------------------------------------------


def write_stage_artifact(
    path: str | Path,
    rows: Sequence[Mapping],
    seed: int,
    config_label: str = "",
    extra_header: Mapping | None = None,
) -> None:
    header = {
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "seed": seed,
        "config_label": config_label,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if extra_header:
        header.update(extra_header)
    ordered = sorted(rows, key=lambda r: (r.get("qa_id") or r.get("id") or ""))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
        for row in ordered:
            handle.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_stage_artifact(path: str | Path) -> tuple[dict, list[dict]]:
    artifact = Path(path)
    if not artifact.is_file():
        raise MissingArtifact(f"required stage artifact missing: {artifact}")
    with open(artifact, encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise MissingArtifact(f"stage artifact empty: {artifact}")
    header = json.loads(lines[0])
    if header.get("schema_version") != ARTIFACT_SCHEMA_VERSION:
        raise AutoevalError(
            f"artifact schema_version {header.get('schema_version')!r} unsupported"
        )
    return header, [json.loads(line) for line in lines[1:]]
