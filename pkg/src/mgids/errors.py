class InvalidArgument(ValueError):
    pass


class EnumerationTooLarge(RuntimeError):
    pass


class DegeneratePosterior(RuntimeError):
    pass


class ConvergenceFailure(RuntimeError):
    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


class InfeasibleLP(RuntimeError):
    pass


class UnboundedLP(RuntimeError):
    pass
