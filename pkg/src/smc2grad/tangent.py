"""Forward-mode value-and-tangent arithmetic.

Every quantity that depends on the model parameters carries, next to its
value, a dense vector of partial derivatives with respect to each of the D
parameter dimensions.  Composing the operations below therefore yields the
exact derivative of any scalar output (log-weights, log-likelihoods) as a
byproduct of evaluating it -- no tape, no replay.

Values may be numpy arrays of any shape; the tangent always has one extra
trailing axis of length D.  This lets a whole particle population share one
``TangentValue``, with all derivative rules applied elementwise.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NumericDomainError",
    "TangentValue",
    "lift_const",
    "lift_param",
    "lift_params",
    "exp",
    "log",
    "sqrt",
    "gaussian_logpdf",
    "logsumexp",
    "clip_nonnegative",
    "stack",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class NumericDomainError(ValueError):
    """Raised when an operation leaves its numeric domain (div by zero, log/sqrt of non-positive)."""


def _astangent(c):
    """Expand a constant so it broadcasts against a tangent's trailing D axis."""
    c = np.asarray(c)
    return c if c.ndim == 0 else c[..., None]


class TangentValue:
    """A value together with its D partial derivatives.

    ``value`` has an arbitrary shape S; ``tangent`` has shape S + (D,).
    Instances are immutable by convention: every operation returns a new one.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent):
        self.value = np.asarray(value, dtype=np.float64)
        self.tangent = np.asarray(tangent, dtype=np.float64)

    # numpy must not intercept arithmetic with ndarrays; we want __r*__ to run.
    __array_ufunc__ = None

    @property
    def dim(self) -> int:
        return self.tangent.shape[-1]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"TangentValue(value={self.value!r}, tangent={self.tangent!r})"

    def __getitem__(self, idx):
        """Index the leading (value) axes; the tangent axis is untouched."""
        return TangentValue(self.value[idx], self.tangent[idx])

    # -- arithmetic ---------------------------------------------------------

    def _const_shift(self, value):
        """Pair a shifted value with this tangent, broadcasting if the shift grew the shape."""
        if value.shape == self.value.shape:
            return TangentValue(value, self.tangent)
        return TangentValue(
            value, np.broadcast_to(self.tangent, value.shape + (self.dim,))
        )

    def __add__(self, other):
        if isinstance(other, TangentValue):
            return TangentValue(self.value + other.value, self.tangent + other.tangent)
        return self._const_shift(self.value + np.asarray(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, TangentValue):
            return TangentValue(self.value - other.value, self.tangent - other.tangent)
        return self._const_shift(self.value - np.asarray(other))

    def __rsub__(self, other):
        return (-self)._const_shift(np.asarray(other) - self.value)

    def __neg__(self):
        return TangentValue(-self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, TangentValue):
            return TangentValue(
                self.value * other.value,
                self.tangent * _astangent(other.value) + other.tangent * _astangent(self.value),
            )
        return TangentValue(self.value * np.asarray(other), self.tangent * _astangent(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TangentValue):
            if np.any(other.value == 0.0):
                raise NumericDomainError("division by a value with zero entries")
            inv = 1.0 / other.value
            val = self.value * inv
            return TangentValue(
                val, (self.tangent - other.tangent * _astangent(val)) * _astangent(inv)
            )
        other = np.asarray(other)
        if np.any(other == 0.0):
            raise NumericDomainError("division by a constant with zero entries")
        return TangentValue(self.value / other, self.tangent / _astangent(other))

    def __rtruediv__(self, other):
        if np.any(self.value == 0.0):
            raise NumericDomainError("division by a value with zero entries")
        inv = 1.0 / self.value
        val = np.asarray(other) * inv
        return TangentValue(val, -self.tangent * _astangent(val * inv))


def lift_const(x, dim: int) -> TangentValue:
    """Wrap a constant (data, pre-drawn noise): its tangent is identically zero."""
    x = np.asarray(x, dtype=np.float64)
    return TangentValue(x, np.zeros(x.shape + (dim,)))


def lift_param(theta: np.ndarray, d: int) -> TangentValue:
    """Seed the recursion for parameter component d: value theta[d], tangent e_d."""
    theta = np.asarray(theta, dtype=np.float64)
    dim = theta.shape[0]
    if not 0 <= d < dim:
        raise IndexError(f"parameter index {d} out of range for {dim} dimensions")
    t = np.zeros(dim)
    t[d] = 1.0
    return TangentValue(theta[d], t)


def lift_params(theta: np.ndarray) -> list[TangentValue]:
    """Lift every component of a parameter vector."""
    return [lift_param(theta, d) for d in range(np.asarray(theta).shape[0])]


def exp(x: TangentValue) -> TangentValue:
    v = np.exp(x.value)
    return TangentValue(v, x.tangent * _astangent(v))


def log(x: TangentValue) -> TangentValue:
    if np.any(x.value <= 0.0):
        raise NumericDomainError("log of non-positive value")
    return TangentValue(np.log(x.value), x.tangent / _astangent(x.value))


def sqrt(x: TangentValue) -> TangentValue:
    # Zero is excluded: the tangent 1/(2*sqrt) would be infinite, and every
    # variance this engine touches is required to be strictly positive.
    if np.any(x.value <= 0.0):
        raise NumericDomainError("sqrt requires a strictly positive argument")
    v = np.sqrt(x.value)
    return TangentValue(v, x.tangent * _astangent(0.5 / v))


def gaussian_logpdf(y, mean: TangentValue, var: TangentValue) -> TangentValue:
    """log N(y; mean, var) with tangents from both the mean and variance partials.

    y is observed data (a constant).  The tangent combines
    d/dmean = (y - mean)/var and d/dvar = -1/(2 var) + (y - mean)^2/(2 var^2),
    each chained with the argument's own tangent.
    """
    if not isinstance(mean, TangentValue) and not isinstance(var, TangentValue):
        raise TypeError("at least one of mean/var must be a TangentValue")
    if not isinstance(mean, TangentValue):
        mean = lift_const(mean, var.dim)
    if not isinstance(var, TangentValue):
        var = lift_const(var, mean.dim)
    if np.any(var.value <= 0.0):
        raise NumericDomainError("gaussian_logpdf requires positive variance")
    y = np.asarray(y, dtype=np.float64)
    inv = 1.0 / var.value
    diff = y - mean.value
    val = -0.5 * (_LOG_2PI + np.log(var.value)) - 0.5 * diff * diff * inv
    d_mean = diff * inv
    d_var = 0.5 * inv * (diff * diff * inv - 1.0)
    return TangentValue(
        val, mean.tangent * _astangent(d_mean) + var.tangent * _astangent(d_var)
    )


def logsumexp(x: TangentValue) -> TangentValue:
    """log sum_j exp(x_j) over axis 0, with tangent sum_j softmax_j * dx_j.

    Entries at -inf contribute zero weight; their tangents must be finite
    (the filter zeroes them when it floors an increment to -inf).
    """
    m = np.max(x.value)
    if not np.isfinite(m):
        return TangentValue(-np.inf, np.zeros(x.tangent.shape[1:]))
    s = np.exp(x.value - m)
    total = np.sum(s)
    w = s / total
    return TangentValue(m + np.log(total), np.sum(x.tangent * w[..., None], axis=0))


def clip_nonnegative(x: TangentValue) -> TangentValue:
    """max(x, 0), with zero tangent wherever the clamp is active."""
    keep = x.value >= 0.0
    return TangentValue(
        np.where(keep, x.value, 0.0), x.tangent * _astangent(keep.astype(np.float64))
    )


def stack(parts: list[TangentValue], axis: int = -1) -> TangentValue:
    """Stack values along a new leading-group axis (tangent axis stays last)."""
    vaxis = axis if axis >= 0 else parts[0].value.ndim + 1 + axis
    return TangentValue(
        np.stack([p.value for p in parts], axis=vaxis),
        np.stack([p.tangent for p in parts], axis=vaxis),
    )
