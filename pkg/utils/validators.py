import math

from utils.errors import DomainError


def require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value}")


def require_count(name: str, value: int, minimum: int = 1) -> None:
    if int(value) != value or value < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {value}")


def require_unit_interval(name: str, value: float) -> None:
    """Check that a weight lies in [0, 1]."""
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def require_fraction(name: str, value: float) -> None:
    """Check an open-interval fraction (0, 1)."""
    if not (math.isfinite(value) and 0.0 < value < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {value}")


def require_weights(omega1: float, omega2: float) -> None:
    require_unit_interval("omega1", omega1)
    require_unit_interval("omega2", omega2)
    if abs(omega1 + omega2 - 1.0) > 1e-9:
        raise DomainError(f"omega1 + omega2 must equal 1, got {omega1} + {omega2}")
