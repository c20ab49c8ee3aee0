"""Double-well potential W(s) = (1 - s^2)^2 and its transition cost."""
import numpy as np
from scipy.integrate import quad


def W(s):
    return (1.0 - s * s) ** 2


def dW(s):
    return -4.0 * s * (1.0 - s * s)


def transition_cost(well=W):
    """2 * int_{-1}^{1} sqrt(well): cost of one slope flip in the sharp limit."""
    val, _ = quad(lambda s: np.sqrt(well(s)), -1.0, 1.0, epsabs=0.0, epsrel=1e-12)
    return 2.0 * val


A0 = transition_cost()
