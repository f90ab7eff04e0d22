"""Writes one reStructuredText page per immgrad module, plus ``package.rst`` linking them all.

Run it from anywhere before ``sphinx-build``; the pages are written next to this script.

"""

import inspect
import os
import sys
from pathlib import Path
from types import ModuleType
from typing import Callable, List

DOCS_PATH = os.path.dirname(os.path.realpath(__file__))
sys.path.insert(0, str(Path(DOCS_PATH).parents[0]))

import immgrad  # noqa: E402

UNDOCUMENTED_MODULES = ('version',)


def heading(text: str, underline: str) -> str:
    return f"{text}\n{underline * len(text)}\n"


def public_members(module: ModuleType, predicate: Callable[[object], bool]) -> List[object]:
    """The public classes or functions defined in :obj:`module` itself, sorted by name."""
    return sorted(
        (
            member for name, member in inspect.getmembers(module, predicate)
            if not name.startswith('_') and getattr(member, '__module__', None) == module.__name__
        ),
        key=lambda member: member.__name__
    )


def module_page(module: ModuleType) -> str:
    shortname = module.__name__.split('.')[-1]
    sections = [heading(module.__name__, '='), f".. automodule:: {module.__name__}\n"]
    classes = public_members(module, inspect.isclass)
    if classes:
        sections.append(heading(f"{shortname} classes", '-'))
        sections.extend(
            f"{heading(c.__name__, '*')}\n.. autoclass:: {c.__name__}\n   :members:\n   :undoc-members:\n"
            f"   :show-inheritance:\n"
            for c in classes
        )
    functions = public_members(module, inspect.isfunction)
    if functions:
        sections.append(heading(f"{shortname} functions", '-'))
        sections.extend(f"{heading(f.__name__, '*')}\n.. autofunction:: {f.__name__}\n" for f in functions)
    return '\n'.join(sections)


def documented_modules() -> List[ModuleType]:
    submodules = [
        module for name, module in inspect.getmembers(immgrad, inspect.ismodule)
        if module.__name__.startswith('immgrad.') and name not in UNDOCUMENTED_MODULES
    ]
    return [immgrad] + sorted(submodules, key=lambda m: m.__name__)


def main():
    modules = documented_modules()
    for module in modules:
        with open(os.path.join(DOCS_PATH, f"{module.__name__}.rst"), 'w') as f:
            f.write(module_page(module))
    with open(os.path.join(DOCS_PATH, "package.rst"), 'w') as f:
        f.write(heading('immgrad API', '-'))
        f.write("\n.. toctree::\n   :maxdepth: 4\n\n")
        f.write(''.join(f"   {module.__name__}\n" for module in modules))


if __name__ == '__main__':
    main()
