"""This module contains utility functions for the torus_lab package."""

from .utils import (
    ensure_dir,
    read_csv,
    run_tasks,
    setup_logging,
    spawn_seeds,
    timestamped_output_dir,
    to_json,
    write_csv,
    write_json,
    write_jsonl,
)

__all__ = [
    'ensure_dir',
    'read_csv',
    'run_tasks',
    'setup_logging',
    'spawn_seeds',
    'timestamped_output_dir',
    'to_json',
    'write_csv',
    'write_json',
    'write_jsonl',
]
