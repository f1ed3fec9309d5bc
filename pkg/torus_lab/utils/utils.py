"""This module contains utility functions for the torus_lab package."""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, List, Mapping, Optional, Sequence, TypeVar

import numpy as np

T = TypeVar('T')
R = TypeVar('R')


def setup_logging(debug: bool = False) -> None:
    """Set up logging configuration.

    Args:
        debug: If True, sets logging level to DEBUG, otherwise INFO
    """
    logging_level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(level=logging_level, format='%(asctime)s - %(levelname)s - %(message)s')


def spawn_seeds(master: int, count: int) -> List[int]:
    """Derive count independent 64-bit seeds from a master seed.

    Args:
        master: Master seed
        count: Number of child seeds

    Returns:
        List[int]: Child seeds in spawn order
    """
    children = np.random.SeedSequence(master).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def run_tasks(func: Callable[[T], R], tasks: Sequence[T], workers: int = 1) -> List[R]:
    """Run func over tasks, in a process pool when workers > 1.

    Results are returned in task order either way.
    """
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    logging.debug('Running %d tasks on %d worker processes', len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, tasks))


def timestamped_output_dir(prefix: str = 'torus-lab') -> str:
    """Name of a fresh output directory: <prefix>_<UTC timestamp>."""
    timestamp = datetime.now(timezone.utc).strftime('%Y-%m-%d-%H-%M-%S-UTC')
    return f'{prefix}_{timestamp}'


def ensure_dir(path: str) -> str:
    """Create path (and parents) if missing and return it."""
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, 'to_dict'):
        return value.to_dict()
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def to_json(payload: Any, indent: Optional[int] = 2) -> str:
    """Serialize payload, converting numpy scalars/arrays and objects with to_dict."""
    return json.dumps(payload, indent=indent, default=_json_default)


def write_json(path: str, payload: Any) -> None:
    """Write payload as indented JSON."""
    ensure_dir(os.path.dirname(path))
    with open(path, 'w', encoding='utf-8') as file:
        file.write(to_json(payload))
        file.write('\n')
    logging.debug('Wrote %s', path)


def write_jsonl(path: str, rows: Iterable[Any]) -> int:
    """Write one compact JSON document per line; returns the number of lines."""
    ensure_dir(os.path.dirname(path))
    count = 0
    with open(path, 'w', encoding='utf-8') as file:
        for row in rows:
            file.write(to_json(row, indent=None))
            file.write('\n')
            count += 1
    logging.debug('Wrote %d records to %s', count, path)
    return count


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file with a header row; floats are written with repr precision."""
    ensure_dir(os.path.dirname(path))
    with open(path, 'w', encoding='utf-8', newline='') as file:
        writer = csv.writer(file)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    logging.debug('Wrote %s', path)


def read_csv(path: str) -> List[Mapping[str, str]]:
    """Read a CSV file written by write_csv into dict rows."""
    with open(path, 'r', encoding='utf-8', newline='') as file:
        return list(csv.DictReader(file))
