class RelcertError(Exception):
    pass


class NetworkFormatError(RelcertError, ValueError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class PropertyError(RelcertError, ValueError):
    pass


class SolverError(RelcertError):
    pass


class DominanceViolation(SolverError):
    """A method ordering that must hold by construction was observed to fail."""
