"""Bessel functions of the orders used by the quadrature-domain machinery.

Everything here is self-contained (no external special-function library):

* ``bessel_j`` / ``bessel_y`` for orders nu in {0, 1/2, 1, 3/2}, which covers
  J_{(n-2)/2}, J_{n/2} and Y_{(n-2)/2} in space dimensions n = 2, 3.
* ``bessel_zero``: positive zeros j_{nu,m}.
* ``fundamental_solution``: radial kernel of -(Laplace + k^2) in 2D/3D.
* ``ball_capacity``: the mass c_k(r) = (2 pi r / k)^{n/2} J_{n/2}(k r) that a
  ball of radius r carries as a k-quadrature domain, and the critical radius
  R_k = j_{(n-2)/2,1} / k beyond which c_k decreases.

Half-integer orders use their closed trigonometric forms.  Integer orders use
the alternating power series for x <= 12 and the Hankel asymptotic expansion
(optimally truncated) beyond; the two branches agree to ~1e-12 at the
switchover.  All functions are pure and reentrant.
"""

from __future__ import annotations

import math

import numpy as np

# Euler-Mascheroni constant, 20 digits.
EULER_GAMMA = 0.57721566490153286061

_SERIES_CUTOFF = 12.0
_ADMISSIBLE_ORDERS = (0.0, 0.5, 1.0, 1.5)


class OrderDomainError(ValueError):
    """Requested Bessel order is outside the supported set {0, 1/2, 1, 3/2}."""


class ArgumentDomainError(ValueError):
    """Argument outside the function's domain (e.g. Y_nu at x <= 0)."""


def _check_order(nu):
    nu = float(nu)
    if nu not in _ADMISSIBLE_ORDERS:
        raise OrderDomainError(
            f"order {nu} not supported; admissible orders are {_ADMISSIBLE_ORDERS}"
        )
    return nu


# ---------------------------------------------------------------------------
# J_nu
# ---------------------------------------------------------------------------

def _j_series(n: int, x: float) -> float:
    """Alternating power series of J_n, integer n >= 0.  Use for x <= ~12."""
    term = (0.5 * x) ** n / math.factorial(n)
    total = term
    m = 0
    while True:
        m += 1
        term *= -(0.25 * x * x) / (m * (m + n))
        total += term
        if abs(term) <= 1e-18 * (abs(total) + 1e-300) and m >= 4:
            return total


def _hankel_pq(nu: float, x: float) -> tuple[float, float]:
    """Optimally truncated asymptotic amplitude sums P_nu(x), Q_nu(x)."""
    mu = 4.0 * nu * nu
    p, q = 1.0, 0.0
    ak = 1.0
    last = 1.0
    for k in range(1, 60):
        ak *= (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(ak) > last:
            break  # series started diverging: stop at the optimal term
        last = abs(ak)
        if k % 2 == 1:
            q += ak * (-1) ** ((k - 1) // 2)
        else:
            p += ak * (-1) ** (k // 2)
    return p, q


def _jy_asymptotic(nu: float, x: float) -> tuple[float, float]:
    p, q = _hankel_pq(nu, x)
    chi = x - (0.5 * nu + 0.25) * math.pi
    amp = math.sqrt(2.0 / (math.pi * x))
    j = amp * (p * math.cos(chi) - q * math.sin(chi))
    y = amp * (p * math.sin(chi) + q * math.cos(chi))
    return j, y


def bessel_j(nu, x: float) -> float:
    """J_nu(x) for nu in {0, 1/2, 1, 3/2} and x >= 0."""
    nu = _check_order(nu)
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise ArgumentDomainError(f"bessel_j requires finite x >= 0, got {x}")
    if nu == 0.5:
        if x == 0.0:
            return 0.0
        return math.sqrt(2.0 / (math.pi * x)) * math.sin(x)
    if nu == 1.5:
        if x == 0.0:
            return 0.0
        if x < 1e-4:
            # sin x / x - cos x suffers cancellation; leading series instead
            return math.sqrt(2.0 / (math.pi * x)) * (x * x / 3.0) * (1.0 - x * x / 10.0)
        return math.sqrt(2.0 / (math.pi * x)) * (math.sin(x) / x - math.cos(x))
    n = int(nu)
    if x <= _SERIES_CUTOFF:
        return _j_series(n, x)
    return _jy_asymptotic(nu, x)[0]


# ---------------------------------------------------------------------------
# Y_nu
# ---------------------------------------------------------------------------

def _y0_series(x: float) -> float:
    """Series-with-logarithm for Y_0, x <= ~12."""
    j0 = _j_series(0, x)
    # sum_{m>=1} (-1)^{m+1} H_m (x^2/4)^m / (m!)^2
    q = 0.25 * x * x
    term = q  # m = 1 term without H_m sign handling below
    h = 1.0
    total = h * term
    m = 1
    while True:
        m += 1
        term *= q / (m * m)
        h += 1.0 / m
        contrib = ((-1) ** (m + 1)) * h * term
        total += contrib
        if abs(contrib) <= 1e-18 * (abs(total) + 1e-300) and m >= 4:
            break
    return (2.0 / math.pi) * ((math.log(0.5 * x) + EULER_GAMMA) * j0 + total)


def _y1_series(x: float) -> float:
    """Series-with-logarithm for Y_1, x <= ~12."""
    j1 = _j_series(1, x)
    # sum_{m>=0} (-1)^m (H_m + H_{m+1}) (x/2)^{2m+1} / (m! (m+1)!)
    half = 0.5 * x
    term = half  # m = 0: (x/2) / (0! 1!)
    hm, hm1 = 0.0, 1.0
    total = (hm + hm1) * term
    m = 0
    while True:
        m += 1
        term *= -(half * half) / (m * (m + 1))
        hm += 1.0 / m
        hm1 += 1.0 / (m + 1)
        contrib = (hm + hm1) * term
        total += contrib
        if abs(contrib) <= 1e-18 * (abs(total) + 1e-300) and m >= 4:
            break
    return (2.0 / math.pi) * ((math.log(0.5 * x) + EULER_GAMMA) * j1 - 1.0 / x) \
        - total / math.pi


def bessel_y(nu, x: float) -> float:
    """Y_nu(x) for nu in {0, 1/2, 1, 3/2} and x > 0."""
    nu = _check_order(nu)
    x = float(x)
    if not (x > 0.0) or not math.isfinite(x):
        raise ArgumentDomainError(
            f"bessel_y requires x > 0 (singular at the origin), got {x}"
        )
    if nu == 0.5:
        return -math.sqrt(2.0 / (math.pi * x)) * math.cos(x)
    if nu == 1.5:
        return -math.sqrt(2.0 / (math.pi * x)) * (math.cos(x) / x + math.sin(x))
    if x <= _SERIES_CUTOFF:
        return _y0_series(x) if nu == 0.0 else _y1_series(x)
    return _jy_asymptotic(nu, x)[1]


# ---------------------------------------------------------------------------
# Zeros
# ---------------------------------------------------------------------------

def _j_derivative(nu: float, x: float) -> float:
    if nu == 0.0:
        return -bessel_j(1.0, x)
    # J_nu' = J_{nu-1} - (nu/x) J_nu
    return bessel_j(nu - 1.0, x) - (nu / x) * bessel_j(nu, x)


def bessel_zero(nu, m: int) -> float:
    """m-th positive zero j_{nu,m} of J_nu, m >= 1, accurate to ~1e-12.

    McMahon's expansion seeds a bracketing search; Newton polishes with a
    bisection fallback so the iterate never leaves the bracket.
    """
    nu = _check_order(nu)
    m = int(m)
    if m < 1:
        raise ValueError(f"zero index m must be >= 1, got {m}")
    if nu == 0.5:
        return m * math.pi  # zeros of sin
    # McMahon asymptotic guess
    mu = 4.0 * nu * nu
    beta = (m + 0.5 * nu - 0.25) * math.pi
    guess = beta - (mu - 1.0) / (8.0 * beta) \
        - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * (8.0 * beta) ** 3)
    # bracket around the guess; zeros are separated by ~pi
    lo, hi = guess - 0.6, guess + 0.6
    lo = max(lo, 1e-8)
    flo, fhi = bessel_j(nu, lo), bessel_j(nu, hi)
    widen = 0
    while flo * fhi > 0.0:
        lo -= 0.3
        hi += 0.3
        lo = max(lo, 1e-8)
        flo, fhi = bessel_j(nu, lo), bessel_j(nu, hi)
        widen += 1
        if widen > 10:
            raise RuntimeError(f"failed to bracket zero j_({nu},{m})")
    x = guess
    for _ in range(100):
        f = bessel_j(nu, x)
        if f * flo < 0.0:
            hi = x
        else:
            lo, flo = x, f
        df = _j_derivative(nu, x)
        step = f / df if df != 0.0 else hi - lo
        xn = x - step
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)  # bisection fallback
        if abs(xn - x) <= 1e-14 * x:
            return xn
        x = xn
    return x


# ---------------------------------------------------------------------------
# Helmholtz kernel and ball capacity
# ---------------------------------------------------------------------------

def _check_dim(n: int) -> int:
    n = int(n)
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    return n


def fundamental_solution(n: int, k: float, r: float) -> float:
    """Radial kernel Psi_k(r) with -(Laplace + k^2) Psi_k = delta_0.

    Psi_k(r) = -(1/4) (k / 2 pi)^{(n-2)/2} r^{-(n-2)/2} Y_{(n-2)/2}(k r),
    which reduces to -Y_0(k r)/4 in 2D and cos(k r)/(4 pi r) in 3D.
    """
    n = _check_dim(n)
    k, r = float(k), float(r)
    if k <= 0.0:
        raise ArgumentDomainError(f"wavenumber k must be > 0, got {k}")
    if r <= 0.0:
        raise ArgumentDomainError("fundamental solution is singular at r = 0")
    if n == 2:
        return -0.25 * bessel_y(0.0, k * r)
    return math.cos(k * r) / (4.0 * math.pi * r)


def ball_capacity(n: int, k: float, r: float) -> float:
    """c_k(r) = (2 pi r / k)^{n/2} J_{n/2}(k r).

    This is the point mass for which the ball B_r is a k-quadrature domain
    (the Helmholtz mean-value constant).  As k -> 0 it tends to |B_r|.
    """
    n = _check_dim(n)
    k, r = float(k), float(r)
    if k <= 0.0 or r <= 0.0:
        raise ArgumentDomainError("ball_capacity requires k > 0 and r > 0")
    return (2.0 * math.pi * r / k) ** (0.5 * n) * bessel_j(0.5 * n, k * r)


def critical_radius(n: int, k: float) -> float:
    """R_k = j_{(n-2)/2,1} / k, the radius maximizing c_k(r)."""
    n = _check_dim(n)
    k = float(k)
    if k <= 0.0:
        raise ArgumentDomainError(f"wavenumber k must be > 0, got {k}")
    return bessel_zero(0.5 * (n - 2), 1) / k


def max_capacity(n: int, k: float) -> float:
    """c_k(R_k), the largest mass a single ball can absorb at wavenumber k."""
    return ball_capacity(n, k, critical_radius(n, k))


# ---------------------------------------------------------------------------
# Vectorized kernels (grid-sized argument arrays; percent-level work)
# ---------------------------------------------------------------------------

def j0_array(x: np.ndarray) -> np.ndarray:
    """Vectorized J_0 over a nonnegative array (abs error ~1e-12)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x <= _SERIES_CUTOFF
    xs = x[small]
    # fixed-length power series; 40 terms is fully converged at x = 12
    total = np.ones_like(xs)
    term = np.ones_like(xs)
    q = 0.25 * xs * xs
    for m in range(1, 40):
        term *= -q / (m * m)
        total += term
    out[small] = total
    xl = x[~small]
    if xl.size:
        out[~small] = _j0_hankel_array(xl)
    return out


def _hankel_pq_array(mu: float, x: np.ndarray, terms: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.ones_like(x)
    q = np.zeros_like(x)
    ak = np.ones_like(x)
    for k in range(1, terms + 1):
        ak = ak * ((mu - (2 * k - 1) ** 2) / (k * 8.0)) / x
        if k % 2 == 1:
            q += ak * (-1) ** ((k - 1) // 2)
        else:
            p += ak * (-1) ** (k // 2)
    return p, q


def _j0_hankel_array(x: np.ndarray) -> np.ndarray:
    p, q = _hankel_pq_array(0.0, x, 10)
    chi = x - 0.25 * math.pi
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def y0_array(x: np.ndarray) -> np.ndarray:
    """Vectorized Y_0 over a positive array (abs error ~1e-12)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ArgumentDomainError("y0_array requires strictly positive arguments")
    out = np.empty_like(x)
    small = x <= _SERIES_CUTOFF
    xs = x[small]
    if xs.size:
        j0 = j0_array(xs)
        q = 0.25 * xs * xs
        term = q.copy()
        h = 1.0
        total = h * term
        for m in range(2, 42):
            term *= q / (m * m)
            h += 1.0 / m
            total += ((-1) ** (m + 1)) * h * term
        out[small] = (2.0 / math.pi) * ((np.log(0.5 * xs) + EULER_GAMMA) * j0 + total)
    xl = x[~small]
    if xl.size:
        p, q = _hankel_pq_array(0.0, xl, 10)
        chi = xl - 0.25 * math.pi
        out[~small] = np.sqrt(2.0 / (math.pi * xl)) * (p * np.sin(chi) + q * np.cos(chi))
    return out
