"""Numerical toolkit for trilinear Fourier multipliers on L^2 x L^2 x L^2 -> L^{2/3}.

Wavelet decomposition of multipliers, the level-set / slice-cardinality
partition of coefficient index sets, a desk-scale trilinear operator engine,
sufficiency-side bound checks and the Rademacher counterexample.
"""

from trimult.errors import ConstructionError, RefusalError

__version__ = "0.1.0"

__all__ = ["ConstructionError", "RefusalError", "__version__"]
