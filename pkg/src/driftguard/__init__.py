"""Self-adaptive IoT testbed with a lifelong learning layer.

The package simulates a small multi-hop sensor network whose adaptation
options are selected each cycle by a classifier-driven feedback loop.  A
lifelong learning layer watches the stream of verified quality values,
detects when configurations start landing outside all known classes, and
evolves the classifier with (automated or human) operator feedback.
"""

__version__ = "0.1.0"

from .errors import (
    DriftguardError,
    InvalidFeedbackError,
    InvalidInputError,
    InvalidStateError,
)

__all__ = [
    "DriftguardError",
    "InvalidInputError",
    "InvalidStateError",
    "InvalidFeedbackError",
]
