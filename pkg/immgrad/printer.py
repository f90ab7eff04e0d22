"""Human-readable result tables for the command line.

A :class:`Printer` writes plain text to its stream, optionally colored with ANSI escapes through :mod:`colorama`.
Relative changes are colored by their sign: negative changes (improvements over a baseline) are green and positive
changes (regressions) are red.

Attributes:
    DEFAULT_PRINTER (Printer): A default :class:`Printer` instance printing to :attr:`sys.stdout`.

"""

import logging
import math
import sys
from functools import wraps
from typing import Optional, Sequence, TextIO, Union

import colorama
from colorama import Fore, Style
from colorama.ansi import AnsiFore

from .progress import StatusWriter


log = logging.getLogger(__name__)

Cell = Union[str, float, int, None]


def only_ansi(func):
    """A decorator for :class:`Printer` methods that only have an effect when printing in color.

    If the printer has :attr:`Printer.ansi_color` disabled, the decorated method returns a :class:`NullColorContext`.

    """
    @wraps(func)
    def wrapper(self: 'Printer', *args, **kwargs):
        if self.ansi_color:
            return func(self, *args, **kwargs)
        return NullColorContext(self)

    return wrapper


class ColorContext:
    """Prints everything written inside a ``with`` block in one foreground color or style."""

    def __init__(self, printer: 'Printer', start_code: str, end_code: str):
        self.printer: 'Printer' = printer
        self.start_code: str = start_code
        self.end_code: str = end_code

    def __enter__(self) -> 'Printer':
        self.printer.raw_write(self.start_code)
        return self.printer

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.printer.raw_write(self.end_code)


class NullColorContext:
    """A :class:`ColorContext` that does not emit anything."""

    def __init__(self, printer: 'Printer'):
        self.printer: 'Printer' = printer

    def __enter__(self) -> 'Printer':
        return self.printer

    def __exit__(self, exc_type, exc_val, exc_tb):
        pass


def format_cell(value: Cell, precision: int = 4) -> str:
    if value is None:
        return '-'
    elif isinstance(value, str):
        return value
    elif isinstance(value, bool) or isinstance(value, int):
        return str(value)
    elif math.isnan(value):
        return 'n/a'
    return f"{value:.{precision}g}"


def format_percent(value: Optional[float]) -> str:
    """Formats a relative change, *e.g.*, ``-16.07%``."""
    if value is None or math.isnan(value):
        return 'n/a'
    return f"{value:+.2f}%"


class Printer(StatusWriter):
    """An ANSI color printer for result tables."""

    def __init__(self, out_stream: Optional[TextIO] = None, ansi_color: Optional[bool] = None, quiet: bool = False):
        """Initializes a printer.

        Args:
            out_stream: The stream to print to; defaults to :attr:`sys.stdout`.
            ansi_color: Whether to print in color. Defaults to whether :obj:`out_stream` is a TTY.
            quiet: Whether progress bars are suppressed.

        """
        if out_stream is None:
            out_stream = sys.stdout
        super().__init__(out_stream=out_stream, quiet=quiet)
        self._ansi_color: bool = False
        self.ansi_color = ansi_color
        if self.ansi_color:
            colorama.init()

    @property
    def ansi_color(self) -> bool:
        """Whether this printer emits color."""
        return self._ansi_color

    @ansi_color.setter
    def ansi_color(self, is_color: Optional[bool]):
        if is_color is None:
            self._ansi_color = self.isatty()
        else:
            self._ansi_color = is_color

    def raw_write(self, s: str) -> int:
        return super().write(s)

    def newline(self):
        self.write('\n')

    @only_ansi
    def color(self, foreground_color: AnsiFore) -> ColorContext:
        return ColorContext(self, foreground_color, Fore.RESET)

    @only_ansi
    def bright(self) -> ColorContext:
        return ColorContext(self, Style.BRIGHT, Style.RESET_ALL)

    def write_change(self, value: Optional[float], width: int = 0):
        """Writes a relative change in percent, green if it is an improvement and red if it is a regression."""
        text = format_percent(value).rjust(width)
        if value is None or math.isnan(value) or value == 0:
            self.write(text)
        elif value < 0:
            with self.color(Fore.GREEN):
                self.write(text)
        else:
            with self.color(Fore.RED):
                self.write(text)

    def table(self, headers: Sequence[str], rows: Sequence[Sequence[Cell]], percent_columns: Sequence[int] = (),
              title: Optional[str] = None):
        """Prints a table with aligned columns.

        Args:
            headers: The column headers.
            rows: The rows; each must have one cell per header.
            percent_columns: Indices of columns that hold relative changes in percent, printed with
                :meth:`Printer.write_change`.
            title: An optional title printed above the table.

        """
        percent_columns = set(percent_columns)
        rendered = [
            [format_percent(cell) if i in percent_columns else format_cell(cell) for i, cell in enumerate(row)]
            for row in rows
        ]
        for row in rendered:
            if len(row) != len(headers):
                raise ValueError(f"Expected {len(headers)} cells but got {len(row)}: {row!r}")
        widths = [
            max([len(header)] + [len(row[i]) for row in rendered]) for i, header in enumerate(headers)
        ]
        if title is not None:
            with self.bright():
                self.write(title)
            self.newline()
        with self.bright():
            self.write('  '.join(header.ljust(width) for header, width in zip(headers, widths)).rstrip())
        self.newline()
        self.write('  '.join('-' * width for width in widths))
        self.newline()
        for row, text in zip(rows, rendered):
            for i, (cell, width) in enumerate(zip(row, widths)):
                if i > 0:
                    self.write('  ')
                if i in percent_columns:
                    self.write_change(cell, width)
                else:
                    self.write(text[i].ljust(width) if i == 0 else text[i].rjust(width))
            self.newline()
        self.flush()


DEFAULT_PRINTER: Printer = Printer()
