"""
Exception types shared by the computational modules and the CLI
"""


class MacrolimitError(Exception): pass


class InvalidMagnetization(MacrolimitError, ValueError):
    def __init__(self, mu, n_spins):
        self.mu = mu
        self.n_spins = n_spins
        super().__init__(
            f"invalid magnetization mu={mu} for N={n_spins}: "
            f"need |mu| <= N and mu = N (mod 2)")


class ParameterRangeError(MacrolimitError, ValueError): pass


class ShapeMismatch(MacrolimitError, ValueError): pass


class InsufficientSamples(MacrolimitError, ValueError): pass


class InvalidBox(MacrolimitError, ValueError):
    """A box distribution violates positivity, normalization or no-signaling.

    `constraint` names the violated condition and `indices` the entry or
    marginal pair where it was detected.
    """
    def __init__(self, constraint, indices, detail=""):
        self.constraint = constraint
        self.indices = dict(indices)
        where = ", ".join(f"{k}={v}" for k, v in self.indices.items())
        message = f"{constraint} violated at ({where})"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class InvariantViolation(MacrolimitError, AssertionError):
    """An internal identity that must hold exactly did not."""


class UsageError(MacrolimitError):
    def __init__(self, flag, message):
        self.flag = flag
        super().__init__(f"{flag}: {message}")
