"""Tropical semiring: weights are nonnegative -log probabilities or +inf.

plus is min, times is addition; ZERO (+inf) annihilates and ONE (0.0) is
the multiplicative identity. The axioms are property-tested.
"""

ZERO = float("inf")
ONE = 0.0


def plus(a: float, b: float) -> float:
    return a if a <= b else b


def times(a: float, b: float) -> float:
    if a == ZERO or b == ZERO:
        return ZERO
    return a + b


def approx_equal(a: float, b: float, tol: float = 1e-9) -> bool:
    if a == ZERO or b == ZERO:
        return a == b
    return abs(a - b) <= tol
