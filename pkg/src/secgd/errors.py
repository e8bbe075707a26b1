"""Exceptions shared across the protocol modules."""

from __future__ import annotations


class ProtocolError(RuntimeError):
    """Base for aborts raised while running the protocol."""


class EquivocationError(ProtocolError):
    """A hash check came back inconsistent: the server served more than
    one round configuration, or a check timed out."""


class ConfigRejected(ProtocolError):
    """Client policy refuses the offered round configuration."""


class RoundVoid(ProtocolError):
    """The round closed with messages missing (dropout).

    Carries only the shortfall counts; the partial sum is uniform noise
    and is deliberately not exposed.
    """

    def __init__(self, missing_masked: int, missing_seeds: int):
        self.missing_masked = missing_masked
        self.missing_seeds = missing_seeds
        super().__init__(
            f"round void: missing {missing_masked} masked gradients "
            f"and {missing_seeds} seeds"
        )


class TrainingDiverged(RuntimeError):
    """A model update produced non-finite parameters."""


class DataError(ValueError):
    """A client computed a non-finite local gradient."""


class SolverSizeError(ValueError):
    """Instance exceeds the exact solver's feasibility guard."""


class ReconstructionFailed(RuntimeError):
    """The observed aggregate gradients admit no real feature solution."""
