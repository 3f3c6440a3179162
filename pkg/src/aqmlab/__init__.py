"""Fluid-model laboratory for RBF-based active queue management."""

from .controllers import (Ared, Constant, Controller, DropTail, Irbf, Pi, Rbf, Rem,
                          compile_controller, named_controllers, preset_controllers)
from .fluid_model import (DelayLine, NetworkParams, RunResult, SimState, derivatives,
                          rtt, saturate, simulate, step)

__version__ = "0.1.0"
