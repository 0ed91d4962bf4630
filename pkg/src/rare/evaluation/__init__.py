"""Anticipation metrics and latency benchmarking."""
