"""Continual-learning lab: a unified Bregman objective, refresh (unlearn/relearn)
training, and numerical checks, all on a small numpy MLP."""

from clref.errors import ContractError, DegenerateError, FormatError, NumericError

__version__ = "0.1.0"

__all__ = ["ContractError", "DegenerateError", "FormatError", "NumericError", "__version__"]
