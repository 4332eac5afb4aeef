"""Exception hierarchy shared by every dpdice module."""


class DpDiceError(Exception):
    pass


class ConfigurationError(DpDiceError, ValueError):
    """Incompatible or malformed parameters (sketch shapes, configs, headers)."""


class InvalidParameter(DpDiceError, ValueError):
    """A numeric parameter lies outside the domain where a bound is valid."""


class MaterialExhausted(DpDiceError):
    """The dealer material of one kind has been fully consumed."""


class MaterialReuse(DpDiceError):
    """A one-time dealer item was presented for a second use."""


class MacCheckError(DpDiceError):
    """The MAC check on opened values failed: some share was tampered with."""


class TransportError(DpDiceError):
    """A peer disconnected, timed out, or sent a malformed frame."""


class ProtocolAbort(DpDiceError):
    """A protocol session was aborted; carries the phase it aborted in."""

    def __init__(self, phase: str, reason: str):
        super().__init__(f"protocol aborted during {phase}: {reason}")
        self.phase = phase
        self.reason = reason
