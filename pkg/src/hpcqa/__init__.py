"""Question answering for HPC clusters.

Retrieval-augmented answering over cluster documentation, extended with a
registry of described shell commands: when a command's description is
retrieved for a query, the command itself is executed in a sandbox and its
output joins the model context. Ships an automatic evaluation harness
(synthetic Q&A generation, filtering, LLM-as-judge scoring) that runs
entirely offline against deterministic backends.
"""

__version__ = "0.1.0"
