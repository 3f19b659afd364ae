"""hjweave: variational solver for cooperative weakly coupled HJ systems."""

from . import (  # noqa: F401
    caratheodory,
    characteristics,
    config,
    coupling,
    fd_oracle,
    herglotz,
    lagrangians,
    lax_oleinik,
)

__version__ = "0.1.0"
