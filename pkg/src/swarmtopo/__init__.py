"""Parameter regression for simulated collective motion from persistent homology.

Submodules: ``autodiff``, ``simulate``, ``ph``, ``vectorize``, ``model``,
``crocker``, ``metrics``, ``store``, ``pipeline``, ``cli``.
"""
__version__ = "0.1.0"
