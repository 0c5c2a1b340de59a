"""Closed magnetic geodesics on quotients Q/G through critical loops of a lifted action.

Submodules: ``liegroup``, ``bundle``, ``loopspace``, ``gauge``, ``solver``,
``reduction``, ``verify``, plus ``invariants`` (numerical property suite),
``persist`` (file formats) and ``cli``. The package root stays import-light so
the CLI can pin thread counts before numpy loads.
"""

__version__ = "0.1.0"
