"""Byte-level transformer pretraining with sequential task transfer."""

from ._core import *  # noqa: F401,F403
from ._core import Error, __version__, vocab  # noqa: F401
