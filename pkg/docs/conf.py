# Sphinx configuration for the PlanSieve docs.
import os
import sys

sys.path.insert(0, os.path.abspath(".."))

project = "PlanSieve"
author = "PlanSieve developers"
release = "0.0.1"

extensions = ["sphinx.ext.autodoc", "sphinx.ext.napoleon"]

# the docs environment only installs Sphinx and the theme
autodoc_mock_imports = [
    "dask",
    "networkx",
    "numpy",
    "pandas",
    "param",
    "scipy",
    "sklearn",
    "torch",
    "xarray",
    "yaml",
]
autodoc_member_order = "bysource"

exclude_patterns = ["_build"]

html_theme = "sphinx_book_theme"
html_title = "PlanSieve"
