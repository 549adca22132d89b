"""LLM social simulation with SIP-structured agents, plus the evaluation harness."""

__version__ = "0.1.0"
