"""Convolution kernels: construction, normalization, covariance and spectral
geometry.

Three isotropic families are provided:

* ``uniform``: the indicator of the cube [-b0/2, b0/2]^d
* ``bump``: a C-infinity mollifier supported on the ball of radius b0/2
* ``polydecay``: (1 + ||x||^2)^(-eta/2), smooth with polynomial tails,
  hard-truncated for synthesis at the radius where |q| drops below 1e-8

Normalization is to unit L1 norm (superposition kernels) or unit L2 norm
(convolution kernels, so the synthesized field has unit variance). The theory
this laboratory probes assumes very high smoothness/decay budgets (dozens of
derivatives, decay exponents growing like 55*d^2); those regimes are
documented here but deliberately not enforced, since desk-scale experiments
need numerically distinguishable kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import KernelError
from .quadrature import radial_integral, tensor_simpson

FAMILIES = ("uniform", "bump", "polydecay")
TRUNCATION_THRESHOLD = 1e-8

# numeric codes used by the jitted shot-noise accumulator
FAMILY_CODES = {"uniform": 0, "bump": 1, "polydecay": 2}


@dataclass(frozen=True)
class KernelSpec:
    dim: int
    family: str
    b0: float
    eta: float | None
    normalization: str  # "L1" | "L2"
    scale: float
    trunc_radius: float
    trunc_tail: float  # L2 mass discarded by hard truncation


def _check_family_params(dim, family, b0, eta, normalization):
    if family not in FAMILIES:
        raise KernelError(f"unknown kernel family {family!r}")
    if dim not in (1, 2, 3):
        raise KernelError(f"kernel dim must be 1, 2 or 3, got {dim}")
    if b0 <= 0:
        raise KernelError(f"b0 must be positive, got {b0}")
    if normalization not in ("L1", "L2"):
        raise KernelError(f"normalization must be L1 or L2, got {normalization!r}")
    if family == "polydecay":
        if eta is None:
            raise KernelError("polydecay kernel requires eta")
        need = dim if normalization == "L1" else dim / 2.0
        if eta <= need:
            raise KernelError(
                f"polydecay eta={eta} not integrable for {normalization} in dim {dim}"
            )
    elif eta is not None:
        raise KernelError(f"eta only applies to the polydecay family")


def _unscaled_profile(family, b0, eta):
    """Radial profile f(r) of the unscaled kernel."""
    if family == "uniform":
        # handled separately; profile only used for radial quadrature
        def f(r):
            return (r <= b0 / 2.0).astype(float)

    elif family == "bump":
        R2 = (b0 / 2.0) ** 2

        def f(r):
            r = np.asarray(r, float)
            s = np.clip(r * r / R2, 0.0, None)
            out = np.zeros_like(s)
            inside = s < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
            return out

    else:

        def f(r):
            r = np.asarray(r, float)
            return (1.0 + r * r) ** (-eta / 2.0)

    return f


def _poly_tail_radius(dim, eta, power, tol=1e-9):
    """Radius beyond which the tail of r^(dim-1) * profile^power is < tol."""
    # tail of int_R^inf r^(d-1) (1+r^2)^(-power*eta/2) dr ~ R^(d-power*eta)/(power*eta-d)
    expo = power * eta - dim
    if expo <= 0:
        raise KernelError("polydecay tail not integrable")
    return max(8.0, (tol * expo) ** (-1.0 / expo))


def make_kernel(dim, family, b0=1.0, eta=None, normalization="L2") -> KernelSpec:
    """Build and normalize a kernel; quadrature norms land within 1e-6 of 1."""
    _check_family_params(dim, family, b0, eta, normalization)
    b0 = float(b0)
    eta = None if eta is None else float(eta)

    if family == "uniform":
        scale = b0**-dim if normalization == "L1" else b0 ** (-dim / 2.0)
        return KernelSpec(dim, family, b0, None, normalization, scale, b0 / 2.0, 0.0)

    profile = _unscaled_profile(family, b0, eta)
    if family == "bump":
        r_work = b0 / 2.0
    else:
        power = 1 if normalization == "L1" else 2
        r_work = _poly_tail_radius(dim, eta, power)

    if normalization == "L1":
        mass = radial_integral(profile, r_work, dim, tol=1e-9)
    else:
        mass = radial_integral(lambda r: profile(r) ** 2, r_work, dim, tol=1e-9)
    if mass <= 0 or not np.isfinite(mass):
        raise KernelError(f"degenerate kernel: norm integral {mass}")
    scale = 1.0 / mass if normalization == "L1" else mass**-0.5

    if family == "bump":
        trunc_radius, tail = b0 / 2.0, 0.0
    else:
        if scale <= TRUNCATION_THRESHOLD:
            raise KernelError("polydecay kernel scale below truncation threshold")
        trunc_radius = math.sqrt((scale / TRUNCATION_THRESHOLD) ** (2.0 / eta) - 1.0)
        # discarded L2 mass, from the analytic tail bound
        expo = 2 * eta - dim
        tail = scale**2 * trunc_radius ** (-expo) / expo
    return KernelSpec(dim, family, b0, eta, normalization, scale, trunc_radius, tail)


def renormalize(spec: KernelSpec, normalization: str) -> KernelSpec:
    """Same shape, rescaled to the requested unit norm."""
    return make_kernel(spec.dim, spec.family, spec.b0, spec.eta, normalization)


def with_scale(spec: KernelSpec, scale: float) -> KernelSpec:
    """Override the scale factor (leaves the truncation radius untouched)."""
    return replace(spec, scale=float(scale))


def support_radius(spec: KernelSpec) -> float:
    """Per-axis half-width of the (truncated) support box."""
    return spec.trunc_radius if spec.family == "polydecay" else spec.b0 / 2.0


def evaluate(spec: KernelSpec, pts) -> np.ndarray:
    """Kernel values at points of shape (N, dim) or (dim,)."""
    pts = np.asarray(pts, float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != spec.dim:
        raise KernelError(f"points have dim {pts.shape[1]}, kernel has dim {spec.dim}")
    if spec.family == "uniform":
        inside = np.all(np.abs(pts) <= spec.b0 / 2.0, axis=1)
        out = np.where(inside, spec.scale, 0.0)
    else:
        t = np.sum(pts * pts, axis=1)
        out = np.zeros(pts.shape[0])
        if spec.family == "bump":
            R2 = (spec.b0 / 2.0) ** 2
            s = t / R2
            inside = s < 1.0
            out[inside] = spec.scale * np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        else:
            inside = t <= spec.trunc_radius**2
            out[inside] = spec.scale * (1.0 + t[inside]) ** (-spec.eta / 2.0)
    return float(out[0]) if squeeze else out


def _radial_derivatives(spec: KernelSpec, t: np.ndarray):
    """f, f', f'', f''' of q = scale * f(t), t = ||x||^2, on the support."""
    if spec.family == "bump":
        R2 = (spec.b0 / 2.0) ** 2
        s = t / R2
        a = 1.0 - s
        f = np.exp(1.0 - 1.0 / a)
        g1 = -(a**-2.0)
        g2 = -2.0 * a**-3.0
        g3 = -6.0 * a**-4.0
        fs1 = g1 * f
        fs2 = (g2 + g1 * g1) * f
        fs3 = (g3 + 3.0 * g1 * g2 + g1**3) * f
        return f, fs1 / R2, fs2 / R2**2, fs3 / R2**3
    e = spec.eta / 2.0
    base = 1.0 + t
    f = base**-e
    f1 = -e * base ** (-e - 1.0)
    f2 = e * (e + 1.0) * base ** (-e - 2.0)
    f3 = -e * (e + 1.0) * (e + 2.0) * base ** (-e - 3.0)
    return f, f1, f2, f3


def kernel_derivative(spec: KernelSpec, alpha, pts) -> np.ndarray:
    """Partial derivative of the kernel for a multi-index alpha, |alpha| <= 3."""
    if spec.family == "uniform":
        raise KernelError("uniform indicator kernel is not differentiable")
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != spec.dim or any(a < 0 for a in alpha):
        raise KernelError(f"bad multi-index {alpha} for dim {spec.dim}")
    order = sum(alpha)
    if not 1 <= order <= 3:
        raise KernelError(f"derivative order must be in 1..3, got {order}")
    pts = np.asarray(pts, float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    t = np.sum(pts * pts, axis=1)
    if spec.family == "bump":
        inside = t < (spec.b0 / 2.0) ** 2
    else:
        inside = t <= spec.trunc_radius**2
    out = np.zeros(pts.shape[0])
    if np.any(inside):
        xin = pts[inside]
        tin = t[inside]
        _, f1, f2, f3 = _radial_derivatives(spec, tin)
        idx = [i for i, a in enumerate(alpha) for _ in range(a)]
        if order == 1:
            (i,) = idx
            val = 2.0 * xin[:, i] * f1
        elif order == 2:
            i, j = idx
            val = 4.0 * xin[:, i] * xin[:, j] * f2
            if i == j:
                val += 2.0 * f1
        else:
            i, j, k = idx
            val = 8.0 * xin[:, i] * xin[:, j] * xin[:, k] * f3
            corr = np.zeros_like(val)
            if i == j:
                corr += xin[:, k]
            if i == k:
                corr += xin[:, j]
            if j == k:
                corr += xin[:, i]
            val += 4.0 * corr * f2
        out[inside] = spec.scale * val
    return float(out[0]) if squeeze else out


def kernel_norm(spec: KernelSpec, which: str, tol=1e-9) -> float:
    """Current L1 or L2 norm by radial quadrature."""
    if spec.family == "uniform":
        vol = spec.b0**spec.dim
        return spec.scale * vol if which == "L1" else abs(spec.scale) * vol**0.5
    profile = _unscaled_profile(spec.family, spec.b0, spec.eta)
    r = support_radius(spec)
    if which == "L1":
        return spec.scale * radial_integral(profile, r, spec.dim, tol=tol)
    return abs(spec.scale) * radial_integral(lambda x: profile(x) ** 2, r, spec.dim, tol=tol) ** 0.5


def covariance(spec: KernelSpec, lag, tol=1e-6) -> float:
    """C(x) = int q(y) q(y + x) dy for an L2-normalized kernel.

    The integrand is symmetrized in x before quadrature, which makes the
    evenness C(x) = C(-x) hold bitwise, not just to quadrature accuracy.
    """
    if spec.normalization != "L2":
        raise KernelError("covariance requires an L2-normalized kernel")
    lag = np.atleast_1d(np.asarray(lag, float))
    if lag.size != spec.dim:
        raise KernelError(f"lag has dim {lag.size}, kernel has dim {spec.dim}")
    r = support_radius(spec)
    if np.any(np.abs(lag) >= 2.0 * r):
        return 0.0
    if spec.family == "uniform":
        # Indicator autocorrelation in closed form: per-axis triangles.
        # Quadrature nodes landing on the jump make Simpson refinement
        # stall at O(h), which is hopeless in d >= 2.
        overlap = np.prod(np.maximum(spec.b0 - np.abs(lag), 0.0))
        return float(spec.scale ** 2 * overlap)

    def integrand(pts):
        return 0.5 * (
            evaluate(spec, pts) * evaluate(spec, pts + lag)
            + evaluate(spec, pts) * evaluate(spec, pts - lag)
        )

    return tensor_simpson(
        integrand, -r * np.ones(spec.dim), r * np.ones(spec.dim), tol=tol
    )


def spectral_moments(spec: KernelSpec, tol=1e-6) -> np.ndarray:
    """lambda_i = -d^2 C / dx_i^2 at 0, computed as int (d_i q)^2 dy.

    These are the variances of the synthesized field's partial derivatives.
    """
    if spec.family == "uniform":
        raise KernelError("spectral moments need a differentiable kernel")
    if spec.normalization != "L2":
        raise KernelError("spectral moments require an L2-normalized kernel")
    r = support_radius(spec)
    lam = np.empty(spec.dim)
    for i in range(spec.dim):
        alpha = tuple(1 if j == i else 0 for j in range(spec.dim))

        def integrand(pts, _a=alpha):
            g = kernel_derivative(spec, _a, pts)
            return g * g

        lam[i] = tensor_simpson(
            integrand, -r * np.ones(spec.dim), r * np.ones(spec.dim), tol=tol
        )
    if np.any(lam <= 1e-12):
        raise KernelError(f"degenerate spectral moments {lam}")
    return lam


def covariance_expansion_gap(spec: KernelSpec, lag, lam=None, tol=1e-8) -> float:
    """(C(x) - 1 + 0.5 sum lambda_i x_i^2) / ||x||^2; tends to 0 as x -> 0."""
    lag = np.atleast_1d(np.asarray(lag, float))
    if lam is None:
        lam = spectral_moments(spec)
    c = covariance(spec, lag, tol=tol)
    quad = 1.0 - 0.5 * float(np.dot(lam, lag * lag))
    return (c - quad) / float(np.dot(lag, lag))
