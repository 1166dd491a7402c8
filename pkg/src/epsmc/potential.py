"""Polynomial potentials with exact derivatives of every order."""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly


@dataclass(frozen=True)
class Potential:
    """U(u) = sum_j coefficients[j] * u**j, in nondimensional units.

    Differentiation is exact coefficient arithmetic, so the odd-derivative
    phase series of the transition kernel truncates with no error.
    """

    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs:
            coeffs = (0.0,)
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def zero(cls):
        return cls((0.0,))

    @property
    def degree(self):
        d = len(self.coefficients) - 1
        while d > 0 and self.coefficients[d] == 0.0:
            d -= 1
        return d

    def derivative_coefficients(self, order=1):
        """Coefficients of d^order U / du^order; empty-to-zero for order > degree."""
        c = np.asarray(self.coefficients, dtype=float)
        for _ in range(order):
            c = npoly.polyder(c)
            if c.size == 0:
                return np.zeros(1)
        return c

    def value(self, u):
        return npoly.polyval(u, np.asarray(self.coefficients, dtype=float))

    def derivative(self, order, u):
        return npoly.polyval(u, self.derivative_coefficients(order))

    def is_zero(self):
        return all(c == 0.0 for c in self.coefficients)
