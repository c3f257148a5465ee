"""Temporally-modulated implicit neural representations of mmWave radar cubes.

Modules: ``cube`` (data type, files, spectrograms), ``sim`` (FMCW oracle),
``encoding``, ``inr`` (network and sampling), ``engine`` (gradients, Adam),
``losses``, ``fit``, ``metrics``, ``hypernet``, ``cli``.
"""

__version__ = "0.1.0"
