"""
Core library package for the MLCAT lab.
Holds the numerical pieces (network, attacks, trainer) and the shared plumbing
(configuration, naming, data loading, reporting) used by the experiment scripts.
"""

__version__ = '1.0.0'
