"""Rich console output for the command line: tables, progress, errors."""

from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterable, Iterator, Mapping, Optional, Union

from rich import box
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeRemainingColumn
from rich.table import Table


class Display:
    """Handles all visual output using Rich library."""

    def __init__(self, console: Optional[Console] = None, error_console: Optional[Console] = None):
        self.console = console or Console()
        self.error_console = error_console or Console(stderr=True)

    @staticmethod
    def escape_markup(text: str) -> str:
        """Escape Rich markup characters to prevent parsing errors."""
        return text.replace("[", "\\[").replace("]", "\\]")

    def status(self, message: str):
        """Spinner context for a long operation."""
        return self.console.status(message, spinner="dots")

    def show_metrics(self, title: str, metrics: Mapping[str, Union[float, int, str]]):
        table = Table(title=title, show_header=True, header_style="bold", box=box.SIMPLE)
        table.add_column("metric")
        table.add_column("value", justify="right")
        for name, value in metrics.items():
            text = f"{value:.6g}" if isinstance(value, float) else str(value)
            table.add_row(self.escape_markup(name), text)
        self.console.print(table)

    def show_written(self, paths: Iterable[Union[str, Path]]):
        for path in paths:
            self.console.print(f"  [dim]wrote[/] {self.escape_markup(str(path))}")

    def show_error(self, message: str, exit_code: int):
        """Red error panel on stderr."""
        panel = Panel(
            self.escape_markup(message),
            title=f"[bold red]error (exit {exit_code})[/]",
            border_style="red",
            box=box.ROUNDED,
            padding=(0, 1),
        )
        self.error_console.print(panel)

    @contextmanager
    def training_progress(self, total: int, start: int = 0) -> Iterator:
        """Progress bar; yields a hook(step, row) that advances it and shows the losses."""
        progress = Progress(
            TextColumn("[bold]train[/]"),
            BarColumn(),
            MofNCompleteColumn(),
            TextColumn("{task.fields[losses]}"),
            TimeRemainingColumn(),
            console=self.console,
            transient=False,
        )
        with progress:
            task = progress.add_task("train", total=total, completed=start, losses="")

            def hook(step: int, row: Dict[str, float]):
                losses = f"G {row['l_g']:.3f}  D {row['l_d']:.3f}  makeup {row['makeup']:.4f}"
                progress.update(task, completed=step, losses=losses)

            yield hook
