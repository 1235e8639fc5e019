"""Pretrained-encoder value agents for toy interactive-fiction games."""
