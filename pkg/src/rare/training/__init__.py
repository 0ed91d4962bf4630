"""Training loop, checkpoints and progress reporting."""
