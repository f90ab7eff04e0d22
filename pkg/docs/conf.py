# Sphinx configuration for the immgrad documentation.
#
# Generate the API pages first with `python3 build_api.py`, then run `sphinx-build . _build/html`.

import os
import sys
from pathlib import Path

ROOT_PATH = Path(os.path.dirname(os.path.realpath(__file__))).parents[0]
sys.path.insert(0, str(ROOT_PATH))


def read_version() -> str:
    """Reads the version without importing immgrad, so building the docs does not need its dependencies."""
    attrs = {}
    with open(ROOT_PATH / "immgrad" / "version.py") as f:
        exec(f.read(), attrs)
    version_string = attrs['VERSION_STRING']
    return version_string if 'git' in version_string else f"v{version_string}"


project = 'immgrad'
author = 'the immgrad developers'
copyright = f'2026, {author}'
release = version = read_version()

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.autosectionlabel',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.napoleon',
    'sphinx.ext.todo',
    'sphinx_rtd_theme',
]

exclude_patterns = ['_build']

html_theme = 'sphinx_rtd_theme'
html_theme_options = {
    'prev_next_buttons_location': 'bottom',
    'collapse_navigation': True,
    'navigation_depth': 4,
}

autosectionlabel_prefix_document = True
add_package_names = False
napoleon_include_special_with_doc = True
todo_include_todos = True

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}


def include_init(app, what, name, obj, would_skip, options):
    # documents constructors, whose docstrings describe every argument
    if name == "__init__":
        return False
    return would_skip


def setup(app):
    app.connect("autodoc-skip-member", include_init)
