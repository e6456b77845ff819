"""Training and evaluation services."""
