"""Gaussian-process modulated hazard models and their verification suite.

Subpackages cover the model itself (kernels, path sampling, hazard
evaluation and simulation), the rectangle-class diagnostics used to compare
fitted and true laws, KL neighbourhood checks, analytic probability bounds
with Monte Carlo comparators, posterior sampling, and a CLI tying the
pieces together.
"""

__version__ = "0.1.0"
