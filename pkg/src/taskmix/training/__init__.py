"""Training orchestration: config, the epoch loop, and artifact writers."""
