"""This module contains the CLI interface for the torus_lab package."""

from .cli import create_default_config_file, load_experiment, main, parse_args

__all__ = ['create_default_config_file', 'load_experiment', 'main', 'parse_args']
