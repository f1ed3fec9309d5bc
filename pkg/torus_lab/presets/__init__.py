"""Shipped experiment presets (YAML data files)."""
