import textwrap

import pytest

from hpcqa.commands import SandboxPolicy, load_registry
from hpcqa.corpus import Chunk
from hpcqa.gateway import offline_gateway

REGISTRY_YAML = """\
- name: gpu_status
  argv: ["echo", "GPU 0: V100 memory 12000 MiB used of 32000 MiB, utilization 40%"]
  description: "Shows the GPU model, current memory usage, and utilization in real time"
- name: job_queue
  argv: ["echo", "job 101 running, job 102 waiting"]
  description: "Lists your jobs in the scheduler queue with their current state"
- name: disk_quota
  argv: ["echo", "home quota 50G used 12G free 38G"]
  description: "Reports the disk quota usage and free space for your home directory"
- name: node_load
  argv: ["echo", "load average 3.2 on 8 cores"]
  description: "Samples the current load average on this login node"
- name: module_list
  argv: ["echo", "gcc/12.2 python/3.10 cuda/12.1"]
  description: "Prints the software modules available for you to load"
- name: retired_probe
  argv: ["echo", "retired"]
  description: "An old probe kept for reference only"
  enabled: false
"""


@pytest.fixture
def registry_file(tmp_path):
    path = tmp_path / "registry.yaml"
    path.write_text(REGISTRY_YAML, encoding="utf-8")
    return path


@pytest.fixture
def registry(registry_file):
    return load_registry(registry_file)


@pytest.fixture
def sandbox(tmp_path):
    work = tmp_path / "sandbox"
    work.mkdir()
    return SandboxPolicy(work_dir=work, audit_path=tmp_path / "exec_audit.jsonl")


@pytest.fixture
def gateway():
    return offline_gateway(seed=7, script=[("", "offline reply")])


def make_doc_chunks(n: int, topic: str = "storage") -> list[Chunk]:
    """Distinct documentation chunks about boring unrelated topics."""
    words = [
        "filesystem layout and backup windows",
        "login node etiquette for long compilations",
        "archive tape staging and retrieval windows",
        "project allocation renewal paperwork",
        "network mounts for lab instruments",
    ]
    chunks = []
    for i in range(n):
        body = (
            f"Section {i} about {topic}: {words[i % len(words)]} "
            f"revision {i} applies to rack {i % 7}."
        )
        chunks.append(
            Chunk(id=f"doc-{i:03d}#0000", doc_id=f"doc-{i:03d}", ordinal=0, text=body)
        )
    return chunks


def write_docs(tmp_path, bodies: dict[str, str]):
    docs = tmp_path / "docs"
    docs.mkdir(exist_ok=True)
    for name, body in bodies.items():
        (docs / name).write_text(body, encoding="utf-8")
    return docs


@pytest.fixture
def docs_dir(tmp_path):
    return write_docs(
        tmp_path,
        {
            "accounts.md": textwrap.dedent(
                """\
                # Accounts

                Apply for an account through the research portal. Approval takes two
                business days. Accounts expire yearly and must be renewed.
                """
            ),
            "gpus.md": textwrap.dedent(
                """\
                # GPU partitions

                The cluster has V100 and A100 partitions. Request GPUs with the
                scheduler's gres flag. Jobs without a time limit are rejected.
                """
            ),
            "storage.txt": "Scratch space is purged every 30 days. Home directories are backed up nightly.\n",
        },
    )
