"""Gym-style array bindings for the drivegrid batch engine.

The handle exposes the engine to RL frameworks as flat batched arrays with
the classic reset/step calling convention.  Arrays keep the (W, M, ...)
world/agent axes so framework-side masking stays straightforward.
"""

from .env import EnvHandle, make_env

__all__ = ["EnvHandle", "make_env"]
__version__ = "0.1.0"
