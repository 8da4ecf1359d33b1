"""Deterministic pseudo-random generation and error metrics."""

MODULUS = 2147483647
MULTIPLIER = 48271


class Lcg:
    """Lehmer linear congruential generator producing floats in [0, 1)."""

    def __init__(self, seed):
        self.state = seed % MODULUS or 1

    def next_float(self):
        self.state = (self.state * MULTIPLIER) % MODULUS
        return self.state / MODULUS


def mean_absolute_error(y_true, y_pred):
    """Mean absolute error over paired sequences."""
    if not y_true:
        raise ValueError("empty evaluation window")
    total = sum(abs(a - b) for a, b in zip(y_true, y_pred))
    return total / len(y_true)
