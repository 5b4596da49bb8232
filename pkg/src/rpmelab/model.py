"""Model coefficients: the degenerate nonlinearity, its smooth regularization,
source/noise/drift presets, the exponential growth bound, and sampled checks
of the structural assumptions the estimates rest on.

The conserved quantity is v = beta(c) with beta(c) = c**(1/m) for an exponent
m > 1: beta' blows up at c = 0 while its reciprocal 1/beta' = m*c**(1-1/m)
vanishes there, which is the degeneracy everything else has to live with.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class BetaFamily:
    """The monotone nonlinearity c -> beta(c) with inverse and derivative data.

    ``recip_beta_prime`` is the reciprocal 1/beta', continuously extended by
    its limit at c = 0 (zero for the degenerate family, positive for the
    regularized one); ``beta_prime`` itself returns inf at the degenerate
    origin.
    """

    label: str
    m: float
    eps: float
    beta: Callable[[Array], Array]
    beta_prime: Callable[[Array], Array]
    beta_inv: Callable[[Array], Array]
    recip_beta_prime: Callable[[Array], Array]
    smooth: bool


def pme_beta(m: float) -> BetaFamily:
    """Degenerate porous-medium nonlinearity beta(c) = c**(1/m), m > 1."""
    if not m > 1.0:
        raise ValueError(f"exponent m must exceed 1, got {m}")
    inv_m = 1.0 / m

    def beta(c):
        return np.maximum(np.asarray(c, dtype=np.float64), 0.0) ** inv_m

    def beta_prime(c):
        c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
        with np.errstate(divide="ignore"):
            return np.where(c > 0.0, inv_m * c ** (inv_m - 1.0), np.inf)

    def beta_inv(v):
        return np.maximum(np.asarray(v, dtype=np.float64), 0.0) ** m

    def recip(c):
        c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
        return m * c ** (1.0 - inv_m)

    return BetaFamily(
        label=f"pme:{m:g}",
        m=m,
        eps=0.0,
        beta=beta,
        beta_prime=beta_prime,
        beta_inv=beta_inv,
        recip_beta_prime=recip,
        smooth=False,
    )


def regularize_beta(m: float, eps: float) -> BetaFamily:
    """Shifted-root regularization beta_eps(c) = (c + eps)**(1/m) - eps**(1/m).

    Smooth on the closed half line with bounded positive derivative;
    uniformly within eps**(1/m) of the degenerate family.
    """
    if not m > 1.0:
        raise ValueError(f"exponent m must exceed 1, got {m}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    inv_m = 1.0 / m
    shift = eps**inv_m

    def beta(c):
        c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
        return (c + eps) ** inv_m - shift

    def beta_prime(c):
        c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
        return inv_m * (c + eps) ** (inv_m - 1.0)

    def beta_inv(v):
        v = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
        return (v + shift) ** m - eps

    def recip(c):
        c = np.maximum(np.asarray(c, dtype=np.float64), 0.0)
        return m * (c + eps) ** (1.0 - inv_m)

    return BetaFamily(
        label=f"regularized:{m:g}:{eps:g}",
        m=m,
        eps=eps,
        beta=beta,
        beta_prime=beta_prime,
        beta_inv=beta_inv,
        recip_beta_prime=recip,
        smooth=True,
    )


def beta_gap(family: BetaFamily, c_max: float) -> float:
    """sup over [0, c_max] of |beta_eps - beta| against the degenerate family
    with the same exponent (zero for the degenerate family itself)."""
    if family.eps == 0.0:
        return 0.0
    degenerate = pme_beta(family.m)
    cs = np.linspace(0.0, c_max, 20001)
    return float(np.max(np.abs(family.beta(cs) - degenerate.beta(cs))))


# ---------------------------------------------------------------------------
# source, noise and drift presets


@dataclass(frozen=True)
class SourceTerm:
    """Reaction term f(c, y) with both partial derivatives."""

    label: str
    fn: Callable[[Array, Array], Array]
    d_c: Callable[[Array, Array], Array]
    d_y: Callable[[Array, Array], Array]


@dataclass(frozen=True)
class NoiseTerm:
    """Noise amplitude a(y) with derivative; a(0) = 0 keeps y nonnegative."""

    label: str
    fn: Callable[[Array], Array]
    deriv: Callable[[Array], Array]


@dataclass(frozen=True)
class DriftTerm:
    """SDE drift b(c, y) with both partial derivatives."""

    label: str
    fn: Callable[[Array, Array], Array]
    d_c: Callable[[Array, Array], Array]
    d_y: Callable[[Array, Array], Array]


def _zeros2(c, y):
    return np.zeros_like(np.asarray(c, dtype=np.float64))


def _zeros1(y):
    return np.zeros_like(np.asarray(y, dtype=np.float64))


_ZERO_SOURCE = SourceTerm("zero", _zeros2, _zeros2, _zeros2)
_ZERO_NOISE = NoiseTerm("zero", _zeros1, _zeros1)
_ZERO_DRIFT = DriftTerm("zero", _zeros2, _zeros2, _zeros2)


def preset_coefficients(name: str, params: dict | None = None):
    """Named coefficient fragment.

    ``zero`` fits any slot; ``logistic_f`` is a reaction term, ``linear_a``
    and ``saturating_a`` are noise amplitudes, ``coupling_b`` is a drift.
    Parameter signs that would break nonnegativity preservation are rejected.
    """
    params = dict(params or {})

    def take(key, default):
        return float(params.pop(key, default))

    if name == "zero":
        if params:
            raise ValueError(f"zero preset takes no parameters, got {sorted(params)}")
        return _ZERO_SOURCE
    if name == "logistic_f":
        lam = take("lambda", 1.0)
        cap = take("K", 1.0)
        mu_y = take("mu_y", 0.0)
        if params:
            raise ValueError(f"unknown logistic_f parameters {sorted(params)}")
        if lam < 0.0 or cap <= 0.0 or mu_y < 0.0:
            raise ValueError("logistic_f needs lambda >= 0, K > 0, mu_y >= 0")

        def fn(c, y):
            return lam * c * (1.0 - c / cap) * np.exp(-mu_y * y)

        def d_c(c, y):
            return lam * (1.0 - 2.0 * c / cap) * np.exp(-mu_y * y)

        def d_y(c, y):
            return -mu_y * fn(c, y)

        return SourceTerm(f"logistic_f(lambda={lam:g},K={cap:g},mu_y={mu_y:g})", fn, d_c, d_y)
    if name == "linear_a":
        sigma = take("sigma", 0.5)
        if params:
            raise ValueError(f"unknown linear_a parameters {sorted(params)}")

        def a(y):
            return sigma * np.asarray(y, dtype=np.float64)

        def da(y):
            return np.full_like(np.asarray(y, dtype=np.float64), sigma)

        return NoiseTerm(f"linear_a(sigma={sigma:g})", a, da)
    if name == "saturating_a":
        sigma = take("sigma", 0.5)
        if params:
            raise ValueError(f"unknown saturating_a parameters {sorted(params)}")

        def a(y):
            y = np.asarray(y, dtype=np.float64)
            return sigma * y / (1.0 + y)

        def da(y):
            y = np.asarray(y, dtype=np.float64)
            return sigma / (1.0 + y) ** 2

        return NoiseTerm(f"saturating_a(sigma={sigma:g})", a, da)
    if name == "coupling_b":
        kappa = take("kappa", 1.0)
        rho = take("rho", 1.0)
        if params:
            raise ValueError(f"unknown coupling_b parameters {sorted(params)}")
        if kappa < 0.0 or rho < 0.0:
            raise ValueError("coupling_b needs kappa >= 0 and rho >= 0")

        def b(c, y):
            return kappa * np.asarray(c, dtype=np.float64) - rho * np.asarray(
                y, dtype=np.float64
            )

        def db_c(c, y):
            return np.full_like(np.asarray(c, dtype=np.float64), kappa)

        def db_y(c, y):
            return np.full_like(np.asarray(y, dtype=np.float64), -rho)

        return DriftTerm(f"coupling_b(kappa={kappa:g},rho={rho:g})", b, db_c, db_y)
    raise ValueError(f"unknown coefficient preset {name!r}")


def _as_source(term) -> SourceTerm:
    if isinstance(term, SourceTerm):
        return term
    raise TypeError(f"{term!r} is not usable as a reaction term")


def _as_noise(term) -> NoiseTerm:
    if isinstance(term, NoiseTerm):
        return term
    if isinstance(term, SourceTerm) and term.label == "zero":
        return _ZERO_NOISE
    raise TypeError(f"{term!r} is not usable as a noise amplitude")


def _as_drift(term) -> DriftTerm:
    if isinstance(term, DriftTerm):
        return term
    if isinstance(term, SourceTerm) and term.label == "zero":
        return _ZERO_DRIFT
    raise TypeError(f"{term!r} is not usable as a drift term")


@dataclass(frozen=True)
class CoefficientSet:
    """Full coefficient bundle for one model: nonlinearity, reaction, noise
    amplitude, and drift, with every derivative the variational equations
    need."""

    beta_family: BetaFamily
    source: SourceTerm = _ZERO_SOURCE
    noise: NoiseTerm = _ZERO_NOISE
    drift: DriftTerm = _ZERO_DRIFT

    # flat access for the stepping kernels
    @property
    def beta(self):
        return self.beta_family.beta

    @property
    def beta_prime(self):
        return self.beta_family.beta_prime

    @property
    def beta_inv(self):
        return self.beta_family.beta_inv

    @property
    def recip_beta_prime(self):
        return self.beta_family.recip_beta_prime

    @property
    def pme_exponent(self) -> float:
        return self.beta_family.m

    @property
    def f(self):
        return self.source.fn

    @property
    def df_dc(self):
        return self.source.d_c

    @property
    def df_dy(self):
        return self.source.d_y

    @property
    def a(self):
        return self.noise.fn

    @property
    def a_prime(self):
        return self.noise.deriv

    @property
    def b(self):
        return self.drift.fn

    @property
    def db_dc(self):
        return self.drift.d_c

    @property
    def db_dy(self):
        return self.drift.d_y

    def with_beta(self, family: BetaFamily) -> "CoefficientSet":
        return CoefficientSet(family, self.source, self.noise, self.drift)


def make_coefficients(beta_family: BetaFamily, f=None, a=None, b=None) -> CoefficientSet:
    """Assemble a coefficient set from a nonlinearity and optional fragments."""
    return CoefficientSet(
        beta_family,
        _as_source(f) if f is not None else _ZERO_SOURCE,
        _as_noise(a) if a is not None else _ZERO_NOISE,
        _as_drift(b) if b is not None else _ZERO_DRIFT,
    )


# ---------------------------------------------------------------------------
# growth bound


def r2_bound(T: float, R0: float, beta_family: BetaFamily) -> float:
    """Exponential-in-time sup bound: beta_inv(exp(T*R0)*(beta(R0)+1) - 1).

    Monotone in both arguments and equal to R0 at T = 0.
    """
    if T < 0.0 or R0 < 0.0:
        raise ValueError("r2_bound needs T >= 0 and R0 >= 0")
    inner = math.exp(T * R0) * (float(beta_family.beta(np.float64(R0))) + 1.0) - 1.0
    return float(beta_family.beta_inv(np.float64(inner)))


# ---------------------------------------------------------------------------
# assumption audit


@dataclass(frozen=True)
class CheckEntry:
    name: str
    passed: bool
    measured: float
    limit: float | None = None
    where: float | None = None


@dataclass(frozen=True)
class AssumptionProfile:
    """Parameters the structural assumptions are audited against: Hoelder
    exponents m1, m2 for the nonlinearity, the degeneracy weight bound mu on
    (0, m_bound], and the two radii bounding data and coefficients."""

    m1: float
    m2: float
    mu: float
    m_bound: float
    R0: float
    R1: float


def pme_profile(m: float, R0: float = 1.0, R1: float = 10.0, m_bound: float = 1.0) -> AssumptionProfile:
    """Profile under which the degenerate family passes its own audit:
    both exponents equal m, so c**(1-1/m2) * beta'(c) is the constant 1/m."""
    return AssumptionProfile(m1=m, m2=m, mu=1.0 / m, m_bound=m_bound, R0=R0, R1=R1)


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple[CheckEntry, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def entry(self, name: str) -> CheckEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def validate_assumptions(
    coeffs: CoefficientSet,
    profile: AssumptionProfile,
    T: float,
    sample_density: int = 1000,
) -> AssumptionReport:
    """Sampled audit of the structural assumptions on (beta, f, a, b).

    Every condition is checked on a sampled range and reported with its
    measured supremum; nothing raises, failures are entries with
    ``passed=False``.
    """
    fam = coeffs.beta_family
    r2 = r2_bound(T, profile.R0, fam)
    c_hi = max(r2, 1e-6)
    n = max(int(sample_density), 8)
    entries: list[CheckEntry] = []

    cs = np.linspace(0.0, c_hi, n)
    cs_pos = cs[1:]

    # beta fixes the origin and inverts exactly
    beta0 = abs(float(fam.beta(np.float64(0.0))))
    entries.append(CheckEntry("beta_at_zero", beta0 <= 1e-14, beta0, 1e-14))
    round_trip = float(np.max(np.abs(fam.beta_inv(fam.beta(cs)) - cs)))
    entries.append(
        CheckEntry("beta_inverse_roundtrip", round_trip <= 1e-9 * max(c_hi, 1.0), round_trip)
    )

    # strictly increasing with decreasing positive derivative
    bvals = fam.beta(cs)
    increasing = bool(np.all(np.diff(bvals) > 0.0))
    entries.append(CheckEntry("beta_increasing", increasing, float(np.min(np.diff(bvals)))))
    bp = fam.beta_prime(cs_pos)
    positive = bool(np.all(bp > 0.0))
    entries.append(CheckEntry("beta_prime_positive", positive, float(np.min(bp))))
    decreasing = bool(np.all(np.diff(bp) <= 1e-12 * np.abs(bp[:-1])))
    entries.append(CheckEntry("beta_prime_decreasing", decreasing, float(np.max(np.diff(bp)))))

    # Hoelder seminorm of the reciprocal derivative, exponent 1 - 1/m1
    sub = np.unique(np.concatenate([np.linspace(0.0, c_hi, 160), np.geomspace(c_hi * 1e-8, c_hi, 80)]))
    rvals = fam.recip_beta_prime(sub)
    alpha = 1.0 - 1.0 / profile.m1
    diff = np.abs(rvals[:, None] - rvals[None, :])
    gaps = np.abs(sub[:, None] - sub[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        quot = np.where(gaps > 0.0, diff / gaps**alpha, 0.0)
    hoelder = float(np.max(quot))
    entries.append(CheckEntry("recip_prime_hoelder", hoelder <= profile.R1, hoelder, profile.R1))

    # weighted derivative bound on (0, m_bound]
    ms = np.linspace(profile.m_bound / n, profile.m_bound, n)
    weighted = ms ** (1.0 - 1.0 / profile.m2) * fam.beta_prime(ms)
    w_sup = float(np.max(weighted))
    entries.append(
        CheckEntry(
            "weighted_prime_bound",
            bool(np.isfinite(w_sup) and w_sup <= profile.mu * (1.0 + 1e-9)),
            w_sup,
            profile.mu,
            float(ms[int(np.argmax(weighted))]),
        )
    )

    # reaction growth against beta + 1, and nonnegativity on the c = 0 edge
    y_hi = max(profile.R0, 1.0) * 10.0
    ys = np.linspace(0.0, y_hi, 200)
    cc, yy = np.meshgrid(np.linspace(0.0, c_hi, 200), ys, indexing="ij")
    fvals = coeffs.f(cc, yy)
    growth = fvals / (fam.beta(cc) + 1.0)
    g_sup = float(np.max(growth))
    entries.append(CheckEntry("source_growth", g_sup <= profile.R0 + 1e-12, g_sup, profile.R0))
    f_edge = float(np.min(coeffs.f(np.zeros_like(ys), ys)))
    entries.append(CheckEntry("source_nonneg_at_degenerate", f_edge >= -1e-14, f_edge))

    # source partial derivatives bounded by R1
    for name, fn in (("source_dc_bound", coeffs.df_dc), ("source_dy_bound", coeffs.df_dy)):
        sup = float(np.max(np.abs(fn(cc, yy))))
        entries.append(CheckEntry(name, sup <= profile.R1, sup, profile.R1))

    # noise amplitude: anchored at zero with bounded derivative
    a0 = abs(float(coeffs.a(np.float64(0.0))))
    entries.append(CheckEntry("noise_zero_at_origin", a0 <= 1e-14, a0))
    ap_sup = float(np.max(np.abs(coeffs.a_prime(ys))))
    entries.append(CheckEntry("noise_deriv_bound", ap_sup <= profile.R1, ap_sup, profile.R1))

    # drift: inward on the y = 0 edge, partials bounded
    b_edge = float(np.min(coeffs.b(np.linspace(0.0, c_hi, 200), np.zeros(200))))
    entries.append(CheckEntry("drift_nonneg_at_zero", b_edge >= -1e-14, b_edge))
    for name, fn in (("drift_dc_bound", coeffs.db_dc), ("drift_dy_bound", coeffs.db_dy)):
        sup = float(np.max(np.abs(fn(cc, yy))))
        entries.append(CheckEntry(name, sup <= profile.R1, sup, profile.R1))

    return AssumptionReport(tuple(entries))


# ---------------------------------------------------------------------------
# initial data


def barenblatt_profile(x: Array, t: float, m: float, mass: float) -> Array:
    """Self-similar source-type solution of u_t = (u**m)_xx on the line,
    centered at 1/2: u(x, t) = t**(-al) * max(C - k*(x-1/2)**2 * t**(-2*al), 0)**(1/(m-1))
    with al = 1/(m+1) and k = al*(m-1)/(2*m)."""
    if not m > 1.0:
        raise ValueError("barenblatt profile needs m > 1")
    if t <= 0.0:
        raise ValueError("barenblatt profile needs t > 0")
    al = 1.0 / (m + 1.0)
    k = al * (m - 1.0) / (2.0 * m)
    x = np.asarray(x, dtype=np.float64)
    core = mass - k * (x - 0.5) ** 2 * t ** (-2.0 * al)
    return t ** (-al) * np.maximum(core, 0.0) ** (1.0 / (m - 1.0))


def barenblatt_support_radius(t: float, m: float, mass: float) -> float:
    al = 1.0 / (m + 1.0)
    k = al * (m - 1.0) / (2.0 * m)
    return math.sqrt(mass / k) * t**al


def initial_preset(name: str, dim: int, params: dict | None = None) -> Callable[[Array], Array]:
    """Named initial-data function on the closed cube; takes (..., dim) points."""
    params = dict(params or {})

    def take(key, default):
        return float(params.pop(key, default))

    if name == "constant":
        value = take("value", 0.0)
        if params:
            raise ValueError(f"unknown constant parameters {sorted(params)}")
        if value < 0.0:
            raise ValueError("constant initial data must be nonnegative")
        return lambda x: np.full(x.shape[:-1], value)
    if name == "sine":
        amp = take("amplitude", 0.5)
        if params:
            raise ValueError(f"unknown sine parameters {sorted(params)}")
        if amp < 0.0:
            raise ValueError("sine amplitude must be nonnegative")

        def sine(x):
            out = np.full(x.shape[:-1], amp)
            for k in range(dim):
                out = out * np.sin(np.pi * x[..., k])
            return out

        return sine
    if name == "cosine":
        offset = take("offset", 1.0)
        amp = take("amplitude", 0.5)
        if params:
            raise ValueError(f"unknown cosine parameters {sorted(params)}")
        if offset < abs(amp):
            raise ValueError("cosine preset needs offset >= |amplitude| to stay nonnegative")

        def cosine(x):
            out = np.full(x.shape[:-1], amp)
            for k in range(dim):
                out = out * np.cos(np.pi * x[..., k])
            return offset + out

        return cosine
    if name == "bump":
        amp = take("amplitude", 0.5)
        if params:
            raise ValueError(f"unknown bump parameters {sorted(params)}")
        if amp < 0.0:
            raise ValueError("bump amplitude must be nonnegative")

        def bump(x):
            out = np.full(x.shape[:-1], amp)
            for k in range(dim):
                s = 2.0 * x[..., k] - 1.0
                with np.errstate(divide="ignore", over="ignore"):
                    core = np.where(np.abs(s) < 1.0, np.exp(1.0 - 1.0 / np.maximum(1.0 - s**2, 1e-300)), 0.0)
                out = out * core
            return out

        return bump
    if name == "barenblatt":
        if dim != 1:
            raise ValueError("barenblatt initial data is one-dimensional")
        m = take("m", 2.0)
        t0 = take("t0", 0.05)
        mass = take("mass", 0.05)
        if params:
            raise ValueError(f"unknown barenblatt parameters {sorted(params)}")

        def bb(x):
            u = barenblatt_profile(x[..., 0], t0, m, mass)
            return u**m  # initial data for c, whose beta-image is the profile

        return bb
    raise ValueError(f"unknown initial-data preset {name!r}")
