"""Post-hoc renderer for torusflow lab output directories.

Reads the versioned CSV/JSON artifacts a lab run leaves behind and
produces static figures, convergence tables, and an index page.  All
numbers come from the files; nothing is recomputed beyond straight-line
fits re-derived from the raw series for cross-checking.
"""

from .render import EmptyDirectory, SchemaUnknown, ReportBundle, render

__version__ = "0.1.0"
