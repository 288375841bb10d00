"""Exception hierarchy shared by the toolkit.

The CLI maps ``ConfigError`` to exit status 2 and ``NumericalError`` to 3.
"""


class Disp2DError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(Disp2DError, ValueError):
    """A run configuration (or an argument derived from it) is invalid."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DomainError(Disp2DError, ValueError):
    """A special function or kernel was evaluated outside its domain."""


class ZeroPotentialError(Disp2DError, ValueError):
    """Operation needs V != 0 but the sampled potential vanishes identically."""


class NumericalError(Disp2DError, ArithmeticError):
    """A numerical procedure failed (singular operator, no convergence)."""


class SingularOperatorError(NumericalError):
    def __init__(self, message, block=None, cond=None, lam=None):
        self.block = block
        self.cond = cond
        self.lam = lam
        extra = []
        if block is not None:
            extra.append(f"block={block}")
        if lam is not None:
            extra.append(f"lambda={lam:.6g}")
        if cond is not None:
            extra.append(f"cond={cond:.3e}")
        if extra:
            message = f"{message} ({', '.join(extra)})"
        super().__init__(message)


class QuadratureError(NumericalError):
    def __init__(self, message, worst_panel=None):
        self.worst_panel = worst_panel
        if worst_panel is not None:
            message = f"{message}; worst panel [{worst_panel[0]:.6g}, {worst_panel[1]:.6g}]"
        super().__init__(message)
