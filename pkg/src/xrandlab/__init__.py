"""Explanation-guided randomized response for model explanations.

Modules:

- ``data``: datasets, synthetic benchmark, CSV ingestion, seeded streams
- ``model``: logistic and boosted-stump scorers, bagging subsample training
- ``explainer``: kernel-weighted local linear surrogates and log-odds
- ``xrand``: the two-step randomized-response mechanism
- ``attack``: explanation-guided backdoor poisoning harness
- ``certify``: bagging, PixelDP and boosting-RS certificates
- ``cli``: the ``xrandlab`` command line
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
