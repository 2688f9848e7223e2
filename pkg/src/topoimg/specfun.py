"""
Cylindrical Bessel and Hankel functions of integer order for real positive
arguments.

The closed-form incident, adjoint and Mie fields only ever need
J_n, Y_n and the two Hankel functions built from them, evaluated at
kappa * rho > 0. The kernels come from scipy.special; this module adds the
domain checks the rest of the package relies on and keeps the second-kind
Hankel function an exact conjugate of the first-kind one.
"""

import numpy as np
from scipy import special

# highest order any caller may request
MAX_ORDER = 64


class SpecialFunctionDomainError(Exception):
    """SpecialFunctionDomainError"""
    def __init__(self, message):
        self.message = message


def _check_domain(n, x):
    if isinstance(n, (bool, np.bool_)) or int(n) != n:
        raise SpecialFunctionDomainError("Order must be an integer (n={0})".format(n))
    n = int(n)
    if n < 0 or n > MAX_ORDER:
        raise SpecialFunctionDomainError("Order out of range 0..{0} (n={1})".format(MAX_ORDER, n))
    xa = np.asarray(x, dtype=float)
    if xa.size == 0:
        return n, xa
    if not np.all(np.isfinite(xa)) or np.any(xa <= 0.0):
        raise SpecialFunctionDomainError("Argument must be finite and strictly positive")
    return n, xa


def _result(value, x):
    if np.ndim(x) == 0:
        return value.item() if isinstance(value, np.ndarray) else value
    return value


def bessel_j(n, x):
    """
        Bessel function of the first kind J_n(x)

        Parameters
        ----------
        n : integer
            order, 0 <= n <= MAX_ORDER
        x : float or numpy array
            argument, strictly positive

        Returns
        -------
        value : float or numpy array
            J_n(x), same shape as x

        Examples
        --------
        >>> print(round(bessel_j(0, 1.0), 10))
        0.7651976866
    """
    n, xa = _check_domain(n, x)
    if n == 0:
        value = special.j0(xa)
    elif n == 1:
        value = special.j1(xa)
    else:
        value = special.jv(n, xa)
    return _result(value, x)


def bessel_y(n, x):
    """
        Bessel function of the second kind Y_n(x)

        Parameters
        ----------
        n : integer
            order, 0 <= n <= MAX_ORDER
        x : float or numpy array
            argument, strictly positive

        Returns
        -------
        value : float or numpy array
            Y_n(x), same shape as x

        Examples
        --------
        >>> print(round(bessel_y(0, 1.0), 10))
        0.0882569642
    """
    n, xa = _check_domain(n, x)
    if n == 0:
        value = special.y0(xa)
    elif n == 1:
        value = special.y1(xa)
    else:
        value = special.yv(n, xa)
    return _result(value, x)


def hankel(kind, n, x):
    """
        Hankel function H^1_n(x) = J_n + iY_n or H^2_n(x) = J_n - iY_n

        Both kinds are assembled from the same J_n and Y_n values, so for
        real x the second kind is bit-for-bit the conjugate of the first.

        Parameters
        ----------
        kind : integer
            1 or 2
        n : integer
            order, 0 <= n <= MAX_ORDER
        x : float or numpy array
            argument, strictly positive

        Returns
        -------
        value : complex or numpy complex array

        Examples
        --------
        >>> h = hankel(1, 0, 1.0)
        >>> print(round(h.real, 10), round(h.imag, 10))
        0.7651976866 0.0882569642
    """
    if kind not in (1, 2):
        raise SpecialFunctionDomainError("Hankel kind must be 1 or 2 (kind={0})".format(kind))
    j = np.asarray(bessel_j(n, x))
    y = np.asarray(bessel_y(n, x))
    value = j + 1j * y if kind == 1 else j - 1j * y
    return _result(value, x)


def bessel_jp(n, x):
    """
        Derivative J_n'(x) with respect to the argument
    """
    n, xa = _check_domain(n, x)
    return _result(special.jvp(n, xa), x)


def hankel_p(kind, n, x):
    """
        Derivative of the Hankel function of given kind with respect to the argument
    """
    if kind not in (1, 2):
        raise SpecialFunctionDomainError("Hankel kind must be 1 or 2 (kind={0})".format(kind))
    n, xa = _check_domain(n, x)
    jp = special.jvp(n, xa)
    yp = special.yvp(n, xa)
    value = jp + 1j * yp if kind == 1 else jp - 1j * yp
    return _result(value, x)


#
# signed orders, used by the modal (Mie) series
#

def _parity(n):
    return -1.0 if (abs(n) % 2) else 1.0


def bessel_j_signed(n, x):
    """J_n(x) for any integer n, through J_{-n} = (-1)^n J_n"""
    return _parity(n) * np.asarray(bessel_j(abs(n), x)) if n < 0 else np.asarray(bessel_j(n, x))


def bessel_jp_signed(n, x):
    return _parity(n) * np.asarray(bessel_jp(abs(n), x)) if n < 0 else np.asarray(bessel_jp(n, x))


def hankel1_signed(n, x):
    """H^1_n(x) for any integer n, through H^1_{-n} = (-1)^n H^1_n"""
    return _parity(n) * np.asarray(hankel(1, abs(n), x)) if n < 0 else np.asarray(hankel(1, n, x))


def hankel1p_signed(n, x):
    return _parity(n) * np.asarray(hankel_p(1, abs(n), x)) if n < 0 else np.asarray(hankel_p(1, n, x))
