#!/usr/bin/env python3
"""
Utility functions shared across ktnet: console output, progress display and
access to the packaged data files.
"""

from functools import wraps
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

from rich.console import Console
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    ProgressColumn,
    SpinnerColumn,
    Task,
    TextColumn,
)
from rich.text import Text

from .errors import KtnError

# Global console instance for printing messages
console = Console()

# Error records go to stderr on one line so scripts can parse them
err_console = Console(stderr=True, soft_wrap=True, highlight=False)


class ElapsedRateColumn(ProgressColumn):
    """Elapsed seconds, followed by steps per second for tasks with a total."""

    def render(self, task: Task) -> Text:
        elapsed = (task.finished_time if task.finished else task.elapsed) or 0.0
        if task.total is None or not task.completed or elapsed <= 0:
            return Text(f"{elapsed:.1f}s", style="yellow")
        return Text(f"{elapsed:.1f}s {task.completed / elapsed:.1f} it/s", style="yellow")


def with_phases(*phases: str) -> Callable:
    """
    Decorator for commands that run as a fixed sequence of phases.

    The wrapped function receives a ``next_phase`` keyword argument. Calling
    it marks the current phase done and shows the next label, optionally
    followed by a detail such as a file name.

    Args:
        phases: Labels of the phases in order

    Returns:
        Decorated function
    """

    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            with Progress(
                SpinnerColumn(),
                TextColumn("[cyan]{task.description}"),
                MofNCompleteColumn(),
                ElapsedRateColumn(),
                console=console,
            ) as progress:
                task = progress.add_task(phases[0], total=len(phases))
                remaining = iter(phases[1:])

                def next_phase(detail: str = "") -> None:
                    progress.advance(task)
                    label = next(remaining, None)
                    if label is not None:
                        progress.update(task, description=f"{label} {detail}".rstrip())

                result = func(*args, **kwargs, next_phase=next_phase)
                progress.update(task, completed=len(phases))
                return result

        return wrapper

    return decorator


def iteration_progress() -> Progress:
    """Progress bar for training iterations."""
    return Progress(
        SpinnerColumn(),
        TextColumn("[cyan]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        ElapsedRateColumn(),
        console=console,
    )


def data_file(name: str) -> Path:
    """
    Locate a data file shipped inside the package.

    Args:
        name: File name under ``ktnet/data``

    Returns:
        Filesystem path to the data file
    """
    path = Path(str(resources.files("ktnet") / "data" / name))
    if not path.is_file():
        raise FileNotFoundError(f"packaged data file not found: {path}")
    return path


def resolve_data_path(configured: str, default_name: str) -> Path:
    """Return the configured path, or the packaged default when it is empty."""
    if configured:
        return Path(configured)
    return data_file(default_name)


def report_error(error: Exception, code: Optional[str] = None) -> None:
    """
    Print an error for humans on the console and for scripts on stderr.

    Args:
        error: The exception to report
        code: Error code for exceptions that are not ``KtnError``
    """
    if isinstance(error, KtnError):
        line = error.one_line()
        message = error.message
    else:
        message = str(error)
        line = f"error[{code or 'E_INTERNAL'}]: {' '.join(message.split())}"
    console.print(f"[red]Error: {message}")
    err_console.print(line, markup=False)
