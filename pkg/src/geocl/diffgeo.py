"""Differentiable constant-curvature operations built on the autodiff ops.

Curvature enters as (fixed sign, trainable magnitude); the sign picks the
tan/tanh branch at graph-build time, so forward and backward always agree
on the branch. A zero sign selects the non-trainable Euclidean limit with
its dedicated formulas.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor


# tanh(arg) <= 1 - BALL_EPS, i.e. the lift respects the ball margin.
_BALL_ARG_CAP = float(np.arctanh(1.0 - geometry.BALL_EPS))


def tan_k(z: Tensor, sign: float) -> Tensor:
    return ad.tanh(z) if sign < 0 else ad.tan(z)


def arctan_k(z: Tensor, sign: float) -> Tensor:
    return ad.arctanh(z) if sign < 0 else ad.arctan(z)


def exp_origin(v: Tensor, kmag: Tensor, sign: float) -> Tensor:
    """Exponential map at the origin; identity in the Euclidean limit.

    Spherical lifts cap the tan argument (same cap as the numpy path) so
    the lift never crosses the injectivity radius.
    """
    if sign == 0:
        return v
    sk = ad.sqrt(kmag)
    n = ad.norm(v)
    scaled = sk * n
    # Same domain margins as the numpy path: spherical lifts stay inside
    # the injectivity radius, hyperbolic lifts inside the ball margin.
    cap = geometry.TAN_CAP if sign > 0 else _BALL_ARG_CAP
    arg = ad.clip_max(scaled, cap)
    return (tan_k(arg, sign) / scaled) * v


def log_origin(x: Tensor, kmag: Tensor, sign: float) -> Tensor:
    if sign == 0:
        return x
    sk = ad.sqrt(kmag)
    n = ad.norm(x)
    scaled = sk * n
    return (arctan_k(scaled, sign) / scaled) * x


def mobius_add(x: Tensor, y: Tensor, curvature: Tensor) -> Tensor:
    xy = ad.inner(x, y)
    x2 = ad.sqnorm(x)
    y2 = ad.sqnorm(y)
    one = Tensor(1.0)
    num = (one - 2.0 * curvature * xy - curvature * y2) * x + (one + curvature * x2) * y
    den = one - 2.0 * curvature * xy + curvature * curvature * x2 * y2
    return num / den


def sq_distance(x: Tensor, y: Tensor, kmag: Tensor, sign: float) -> Tensor:
    """Squared geodesic distance; zero-curvature branch is 4*||x-y||^2."""
    if sign == 0:
        return 4.0 * ad.sqnorm(x - y, keepdims=False)
    K = sign * kmag
    diff = mobius_add(-x, y, K)
    sk = ad.sqrt(kmag)
    n = ad.norm(diff, keepdims=False)
    dist = (2.0 / sk) * arctan_k(sk * n, sign)
    return ad.square(dist)


def lifted_sq_distance(u: Tensor, v: Tensor, kmag: Tensor, sign: float) -> Tensor:
    """Squared distance between exp-at-origin embeddings of two raw slices."""
    if sign == 0:
        return 4.0 * ad.sqnorm(u - v, keepdims=False)
    return sq_distance(exp_origin(u, kmag, sign), exp_origin(v, kmag, sign), kmag, sign)


def pairwise_cosines(q: Tensor) -> Tensor:
    """All-pairs cosine matrix of the rows of a 2-D tangent batch."""
    n = ad.norm(q)
    unit = q / n
    return ad.matmul(unit, ad.transpose2d(unit))
