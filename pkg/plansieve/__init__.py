from .core import Laboratory
