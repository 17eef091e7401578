"""Dataset synthesis, training, rendering, metrics and the CLI."""
