"""Longitudinal risk prediction from serial screening images.

The package combines a gated state-space recurrent backbone over yearly
image sequences with an explicit bilateral-asymmetry tracking branch and
an additive hazard head that produces monotone cumulative risk curves.
"""

from mammorisk.tensor import NonFiniteError, Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "NonFiniteError", "__version__"]
