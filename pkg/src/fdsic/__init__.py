"""Digital self-interference cancellation under receiver phase noise.

Baseband simulation of single-tap and multi-tap auxiliary-receiver cancellers
for full-duplex radios, plus the closed-form residual-power model used to
check the simulator.
"""

__version__ = "0.1.0"

from .errors import ConfigurationError, ContractError, DivergenceError

__all__ = ["ConfigurationError", "ContractError", "DivergenceError", "__version__"]
