"""The version of immgrad.

Changing the version here changes the version printed by ``immgrad --version``, the version used in ``setup.py``, and
the version rendered in the documentation.

Attributes:
    DEV_BUILD (bool): Whether this is a development build. If :const:`True`, the git branch is appended to the version.

    __version__ (Tuple[Union[int, str], ...]): The version as a tuple of ints and strings, usually
        major/minor/revision. If :attr:`immgrad.version.DEV_BUILD`, ``("git", git_branch())`` is appended.

    VERSION_STRING (str): :attr:`immgrad.version.__version__` rendered as a string: ints are joined by "." and strings
        by "-".

"""

import os
import subprocess
from typing import Optional, Tuple, Union


def git_branch() -> Optional[str]:
    """Returns the git branch of the source tree, or :const:`None` if it cannot be determined."""
    try:
        branch = subprocess.check_output(
            ['git', 'symbolic-ref', '-q', 'HEAD'],
            cwd=os.path.dirname(os.path.realpath(__file__)),
            stderr=subprocess.DEVNULL
        )
        return branch.decode('utf-8').strip().split('/')[-1]
    except Exception:
        return None


DEV_BUILD = True
"""Whether this is a development build; set to :const:`False` for releases."""


__version__: Tuple[Union[int, str], ...] = (0, 1, 0)

if DEV_BUILD:
    branch_name = git_branch()
    if branch_name is None:
        __version__ = __version__ + ('git',)
    else:
        __version__ = __version__ + ('git', branch_name)


def render_version(version: Tuple[Union[int, str], ...]) -> str:
    rendered = ''
    for element in version:
        if not rendered:
            rendered = str(element)
        elif isinstance(element, int):
            rendered += f'.{element}'
        else:
            rendered += f'-{element!s}'
    return rendered


VERSION_STRING = render_version(__version__)


if __name__ == '__main__':
    print(VERSION_STRING)
