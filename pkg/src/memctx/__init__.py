"""memctx: memory retrieval, token budgeting and RoPE layout for multi-turn video editing."""

__version__ = "0.1.0"
