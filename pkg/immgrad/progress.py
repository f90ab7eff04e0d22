"""Status messages and progress bars on the command line.

Training runs, ablations, and sweeps show :mod:`tqdm` progress bars. Log records written while a bar is active would
tear it, so the command line interface sends its log output through a :class:`StatusWriter`, which buffers whole lines
and hands them to :func:`tqdm.write`.

"""

import io
import sys
from types import TracebackType
from typing import List, Optional, TextIO, Type

from tqdm import tqdm, trange


class StatusWriter:
    """A text stream that interleaves cleanly with :mod:`tqdm` progress bars.

    If :attr:`StatusWriter.status_stream` is either :attr:`sys.stdout` or :attr:`sys.stderr`, text written to this
    writer is buffered and every complete line is printed with :func:`tqdm.write`.

    A status writer that is not used in a ``with`` block must be flushed with
    :meth:`StatusWriter.flush(final=True)<StatusWriter.flush>` after its last write, or the last line may be lost.

    """

    def __init__(self, out_stream: Optional[TextIO] = None, quiet: bool = False):
        """Initializes a status writer.

        Args:
            out_stream: The stream to write to; defaults to :attr:`sys.stderr`.
            quiet: Whether progress bars should be disabled.

        """
        self.quiet: bool = quiet
        """Whether progress bars are disabled."""
        if out_stream is None:
            out_stream = sys.stderr
        self.status_stream: TextIO = out_stream
        self._buffer: List[str] = []
        self._reentries: int = 0
        try:
            self.write_raw: bool = quiet or out_stream.fileno() not in (sys.stderr.fileno(), sys.stdout.fileno())
            """If :const:`True`, text is written straight to the stream rather than through :func:`tqdm.write`."""
        except (io.UnsupportedOperation, AttributeError, ValueError):
            self.write_raw = True

    def tqdm(self, *args, **kwargs) -> tqdm:
        """Returns a :class:`tqdm.tqdm` bar that is disabled if this writer is quiet."""
        if self.quiet:
            kwargs['disable'] = True
        kwargs.setdefault('file', self.status_stream)
        return tqdm(*args, **kwargs)

    def trange(self, *args, **kwargs) -> tqdm:
        """Returns a :func:`tqdm.trange` bar that is disabled if this writer is quiet."""
        if self.quiet:
            kwargs['disable'] = True
        kwargs.setdefault('file', self.status_stream)
        return trange(*args, **kwargs)

    def flush(self, final: bool = False):
        """Writes every complete buffered line.

        If :obj:`final` is :const:`True`, a trailing partial line is written too, followed by a newline.

        """
        text = ''.join(self._buffer)
        self._buffer = []
        if final and text and not text.endswith('\n'):
            text += '\n'
        *lines, rest = text.split('\n')
        for line in lines:
            tqdm.write(line, file=self.status_stream)
        if rest:
            self._buffer.append(rest)
        return self.status_stream.flush()

    def write(self, text: str) -> int:
        if self.write_raw:
            return self.status_stream.write(text)
        self._buffer.append(text)
        if '\n' in text:
            self.flush()
        return len(text)

    def isatty(self) -> bool:
        try:
            return self.status_stream.isatty()
        except (AttributeError, ValueError):
            return False

    def fileno(self) -> int:
        return self.status_stream.fileno()

    def close(self):
        self.flush(final=True)

    def __enter__(self) -> 'StatusWriter':
        self._reentries += 1
        return self

    def __exit__(self, t: Optional[Type[BaseException]], value: Optional[BaseException],
                 traceback: Optional[TracebackType]) -> Optional[bool]:
        self._reentries -= 1
        if self._reentries == 0:
            self.flush(final=True)
        return None
