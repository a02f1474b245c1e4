"""Implicit time stepping for the Robin and Wentzell-Robin evolutions.

The Robin evolution advances the interior mass; the Wentzell evolution
advances the combined interior-plus-boundary mass on the shared dofs, so
boundary vertices carry surface measure.  Positivity is certified through
an M-matrix check of the lumped implicit-Euler step matrix (lumped
evolution mass, zeroth-order form terms lumped to the diagonal), with a
precomputed dt threshold.  Quasi-submarkovian and Lp quasi-contraction
behaviour are measured as observed growth factors of shifted
trajectories, and the 1D drift counterexample that rules out any
quasi-contraction shift is evaluated by adaptive Gauss-Legendre
quadrature of its defining boundary-truncation functional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_legendre

from . import assembly as asm
from .elliptic import FemFunction, SingularSystem, holder_seminorm


_SCHEME_THETA = {"euler": 1.0, "cn": 0.5}


@dataclass(frozen=True)
class EvolutionConfig:
    """Scheme, step size, horizon, boundary model, and contraction shift.

    ``omega`` is the rescaling shift: contraction checks compare
    exp(-omega t) ||u(t)|| against ||u0||.  The dissipativity monitor
    instead steps the shifted generator directly (see ``evolve``).
    """

    scheme: str
    dt: float
    t_end: float
    boundary_model: str = "robin"
    omega: float = 0.0

    def __post_init__(self):
        if self.scheme not in _SCHEME_THETA:
            raise ValueError(f"scheme must be one of {sorted(_SCHEME_THETA)}")
        if self.boundary_model not in ("robin", "wentzell"):
            raise ValueError("boundary_model must be 'robin' or 'wentzell'")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ValueError("t_end must be at least dt")

    @property
    def theta(self):
        return _SCHEME_THETA[self.scheme]

    @property
    def n_steps(self):
        return max(1, int(round(self.t_end / self.dt)))


def evolution_mass(form, boundary_model, lumped=False):
    """Evolution mass matrix: interior mass, plus surface mass in Wentzell mode."""
    if lumped:
        M = form.M_interior_lumped
    else:
        M = form.M_interior
    if boundary_model == "wentzell":
        M = M + form.M_boundary
    return M.tocsr()


def lp_weights(form, boundary_model):
    """Lumped quadrature weights of the Lp norm on the evolution space."""
    w = np.asarray(form.M_interior_lumped.diagonal()).ravel().copy()
    if boundary_model == "wentzell":
        w = w + np.asarray(form.M_boundary.diagonal()).ravel()
    return w


class ThetaStepper:
    """Factorized theta-scheme propagator: (M + theta dt A) u+ = (M - (1-theta) dt A) u."""

    def __init__(self, A, M, dt, theta):
        self.dt = float(dt)
        self.theta = float(theta)
        B = (M + theta * dt * A).tocsc()
        try:
            self._lu = spla.splu(B)
        except RuntimeError as exc:
            raise SingularSystem(f"singular step matrix: {exc}") from exc
        self._B = B
        self._C = (M - (1.0 - theta) * dt * A).tocsr()

    def step(self, u):
        out = self._lu.solve(self._C @ u)
        if not np.all(np.isfinite(out)):
            raise SingularSystem("time step produced non-finite values")
        return out


def step(form, mass, u, cfg):
    """One theta-scheme step of u' = -L u against the given mass matrix."""
    stepper = ThetaStepper(form.A, mass, cfg.dt, cfg.theta)
    return stepper.step(np.asarray(u, dtype=float))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, n_dofs), includes the initial state
    mass: sp.csr_matrix

    @property
    def final(self):
        return self.states[-1]

    def l2_norms(self):
        mu = (self.mass @ self.states.T).T
        return np.sqrt(np.maximum(np.einsum("ki,ki->k", mu, self.states), 0.0))


def _initial_vector(form, u0):
    if isinstance(u0, FemFunction):
        return np.asarray(u0.values, dtype=float).copy()
    if isinstance(u0, asm.ProductState):
        if not u0.consistent:
            raise ValueError("Wentzell evolution requires a trace-consistent state")
        return np.asarray(u0.interior, dtype=float).copy()
    return np.asarray(u0, dtype=float).copy()


def evolve(form, cfg, u0, lumped=False, shifted_generator=False, shift=None):
    """March u' = -L u to t_end; states at 0, dt, 2 dt, ..., t_end.

    ``lumped`` selects the positivity discretization (lumped masses and
    lumped zeroth-order form terms).  With ``shifted_generator`` the
    scheme is applied to the shifted operator A + shift * M, the discrete
    generator of the exp(-shift t)-rescaled flow; implicit Euler is then
    unconditionally monotone once the shift makes the form coercive.
    """
    u = _initial_vector(form, u0)
    A = form.A_lumped if lumped else form.A
    M = evolution_mass(form, cfg.boundary_model, lumped=lumped)
    if shifted_generator:
        w = cfg.omega if shift is None else shift
        A = (A + w * M).tocsr()
    stepper = ThetaStepper(A, M, cfg.dt, cfg.theta)
    n = cfg.n_steps
    states = np.empty((n + 1, u.size))
    states[0] = u
    for k in range(n):
        u = stepper.step(u)
        states[k + 1] = u
    times = cfg.dt * np.arange(n + 1)
    return Trajectory(times, states, M)


# -- positivity certificates ------------------------------------------------------


def is_m_matrix(B, tol=1e-12, iters=200):
    """Certify a sparse nonsingular M-matrix: Z-pattern plus spectral dominance.

    Writes B = s I - N with N >= 0 and certifies rho(N) < s through the
    Collatz-Wielandt bound max_i (N x)_i / x_i over a positive test
    vector (valid for any positive x, so the outcome is a certificate,
    not a convergence claim).
    """
    B = sp.csr_matrix(B)
    d = B.diagonal()
    if d.min() <= 0.0:
        return False
    scale = max(float(np.abs(B).max()), 1.0)
    off = B - sp.diags(d)
    if off.nnz and off.data.max() > tol * scale:
        return False
    s = float(d.max())
    N = (sp.diags(np.full(B.shape[0], s)) - B).tocsr()
    N.data = np.maximum(N.data, 0.0)  # clip Z-tolerance noise
    x = np.ones(B.shape[0])
    for _ in range(iters):
        y = N @ x
        m = y.max()
        if m <= 0.0:
            return True
        x = 0.9 * (y / m) + 0.1
    x = x + 1e-12
    bound = float(np.max((N @ x) / x))
    return bound < s * (1.0 - 1e-12)


def positivity_step_certified(form, cfg, lumped_only=True):
    """Whether the theta step at cfg.dt is provably positivity preserving."""
    del lumped_only
    A = form.A_lumped
    M = evolution_mass(form, cfg.boundary_model, lumped=True)
    theta = cfg.theta
    B = (M + theta * cfg.dt * A).tocsr()
    if not is_m_matrix(B):
        return False
    if theta < 1.0:
        C = (M - (1.0 - theta) * cfg.dt * A).tocsr()
        if C.nnz and C.data.min() < -1e-13 * max(float(np.abs(C).max()), 1.0):
            return False
    return True


def positivity_dt_threshold(form, boundary_model="robin", scheme="euler", dt_cap=1e6):
    """Largest certified positivity-preserving dt for the lumped theta scheme.

    Returns 0.0 when no dt can be certified (convection-dominated
    off-diagonal signs); the implicit-Euler Z-pattern itself is
    dt-independent, so the search resolves the diagonal-dominance and
    explicit-part sign constraints.
    """
    probe = lambda dt: positivity_step_certified(
        form, EvolutionConfig(scheme, dt, dt, boundary_model)
    )
    if not probe(1e-8):
        return 0.0
    lo, hi = 1e-8, 1e-3
    while hi < dt_cap and probe(hi):
        lo, hi = hi, hi * 2.0
    if hi >= dt_cap:
        return float(dt_cap)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * hi:
            break
    return lo


# -- contraction monitors -----------------------------------------------------------


def _submarkovian_shift(field):
    """omega = max(||d|| + k, ||beta|| + k) from the recorded bounds."""
    if field.b_lipschitz is None:
        raise ValueError(
            "coefficient field lacks b_lipschitz: the quasi-submarkovian "
            "shift needs a Lipschitz drift bound"
        )
    k = max(field.b_lipschitz, field.sup_bounds.get("b", 0.0))
    return max(field.sup_bounds.get("d", 0.0) + k, field.sup_bounds.get("beta", 0.0) + k)


def check_linfty_contraction(
    form, cfg, omega=None, trials=20, rng=None, initial_states=None, lumped=True
):
    """Max over trials of max_t exp(-omega t) ||u(t)||_inf / ||u0||_inf.

    With omega=None the quasi-submarkovian shift max(||d||+k, ||beta||+k)
    is derived from the field (requires b_lipschitz).  The
    quasi-submarkovian prediction is a factor <= 1 + O(dt).
    """
    if omega is None:
        omega = _submarkovian_shift(form.field)
    rng = np.random.default_rng(0) if rng is None else rng
    n = form.n_dofs
    states = []
    if initial_states is not None:
        states.extend(np.asarray(u, dtype=float) for u in initial_states)
    else:
        for _ in range(trials):
            u = rng.uniform(-1.0, 1.0, size=n)
            u /= np.abs(u).max()
            states.append(u)
    worst = 0.0
    decay = np.exp(-omega * cfg.dt * np.arange(cfg.n_steps + 1))
    for u0 in states:
        traj = evolve(form, cfg, u0, lumped=lumped)
        sup = np.abs(traj.states).max(axis=1)
        worst = max(worst, float((decay * sup).max() / max(sup[0], 1e-300)))
    return worst


def linfty_step_growth(form, cfg, omega=0.0, lumped=True, dense_cap=2500):
    """One-step L-infinity operator norm of the rescaled step, with witness.

    Computes exp(-omega dt) ||(M + dt A)^-1 M||_inf exactly (dense solve)
    and the sign-pattern initial state that attains it.
    """
    n = form.n_dofs
    if n > dense_cap:
        raise ValueError(f"dense operator-norm witness capped at {dense_cap} dofs")
    A = (form.A_lumped if lumped else form.A).toarray()
    M = evolution_mass(form, cfg.boundary_model, lumped=lumped).toarray()
    E = np.linalg.solve(M + cfg.theta * cfg.dt * A, M - (1.0 - cfg.theta) * cfg.dt * A)
    rows = np.abs(E).sum(axis=1)
    k = int(np.argmax(rows))
    factor = math.exp(-omega * cfg.dt) * float(rows[k])
    witness = np.sign(E[k])
    witness[witness == 0.0] = 1.0
    return factor, witness


@dataclass(frozen=True)
class LpContractionRow:
    p: float
    omega_fitted: float
    envelope_bound: float
    within_envelope: bool


def check_lp_contraction(
    form, cfg, p_list, trials=10, rng=None, lumped=True, inflation=1.25, tol=1e-8
):
    """Fit the smallest growth rate omega_p of the Lp trajectory norms.

    For each p the fitted rate is the max over trials and steps of
    log(||u(t)||_p / ||u0||_p) / t.  The reported envelope is
    delta0_hat * max(p, p') with delta0_hat = inflation * max(omega_2, 0);
    the linear-in-max(p, p') shape is reported, never asserted.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    w = lp_weights(form, cfg.boundary_model)
    ps = sorted(set(float(p) for p in p_list) | {2.0})
    for p in ps:
        if not 1.0 < p < math.inf:
            raise ValueError("p must lie in (1, inf)")
    n = form.n_dofs
    trajs = []
    for _ in range(trials):
        u0 = rng.uniform(-1.0, 1.0, size=n)
        trajs.append(evolve(form, cfg, u0, lumped=lumped))
    fitted = {}
    for p in ps:
        rate = -math.inf
        for traj in trajs:
            norms = (w @ np.abs(traj.states.T) ** p) ** (1.0 / p)
            ref = max(norms[0], 1e-300)
            with np.errstate(divide="ignore"):
                rates = (np.log(np.maximum(norms[1:], 1e-300)) - math.log(ref)) / traj.times[1:]
            rate = max(rate, float(rates.max()))
        fitted[p] = rate
    delta0 = inflation * max(fitted[2.0], 0.0)
    rows = []
    for p in ps:
        if p not in set(float(q) for q in p_list):
            continue
        bound = delta0 * max(p, p / (p - 1.0))
        rows.append(
            LpContractionRow(p, fitted[p], bound, fitted[p] <= bound + tol)
        )
    return rows, fitted[2.0]


# -- kernel probes -------------------------------------------------------------------


@dataclass
class KernelProbe:
    """Discrete heat-kernel column k(t, ., y) with its Hoelder moduli in x."""

    source_vertex: int
    times: np.ndarray
    gamma: float
    columns: list
    holder_modulus: list
    mass_integrals: list
    modulus_bounded: bool


def probe_kernel(form, cfg, y_vertex, times, gamma, lumped=True, modulus_factor=10.0):
    """Evolve the mass-normalized discrete delta at y and record kernel columns.

    Moduli must stay bounded on compact time intervals: each later
    modulus is checked against ``modulus_factor`` times any earlier one
    (the computable shadow of time regularity; no finite computation
    certifies analyticity).
    """
    times = np.asarray(sorted(float(t) for t in times))
    if times.size == 0 or times[0] <= 0.0:
        raise ValueError("kernel probe times must be positive")
    M = evolution_mass(form, cfg.boundary_model, lumped=lumped)
    m_y = M.diagonal()[y_vertex] if lumped else lp_weights(form, cfg.boundary_model)[y_vertex]
    u = np.zeros(form.n_dofs)
    u[y_vertex] = 1.0 / m_y
    steps = np.maximum(1, np.round(times / cfg.dt).astype(int))
    actual = steps * cfg.dt
    A = form.A_lumped if lumped else form.A
    stepper = ThetaStepper(A, M, cfg.dt, cfg.theta)
    columns, moduli, masses = [], [], []
    k = 0
    w = lp_weights(form, cfg.boundary_model)
    for target in steps:
        while k < target:
            u = stepper.step(u)
            k += 1
        col = FemFunction(form.mesh, u.copy())
        columns.append(col)
        moduli.append(holder_seminorm(col, gamma))
        masses.append(float(w @ u))
    bounded = all(
        moduli[j] <= modulus_factor * moduli[i] + 1e-300
        for i in range(len(moduli))
        for j in range(i + 1, len(moduli))
    )
    return KernelProbe(
        int(y_vertex), actual, float(gamma), columns, moduli, masses, bounded
    )


# -- the non-contraction counterexample ------------------------------------------------


@dataclass(frozen=True)
class CounterexampleReport:
    """Outcome of the invariance-criterion quadrature for one shift omega.

    ``form_value`` is the truncation functional of the bump 2(1 - x^2)^n
    over its superlevel set {u_n >= 1} = [-alpha_n, alpha_n]; the
    criterion for quasi-L-infinity-contractivity demands it be
    nonnegative, while the bound -2 + 4 omega alpha_n sits below zero
    once n makes alpha_n small enough.
    """

    omega: float
    n: int
    alpha_n: float
    form_value: float
    bound: float
    verdict: str


N_CAP = 10**6


def alpha_n(n):
    """alpha_n = (1 - 2^(-1/n))^(1/2): the level-1 crossing of 2(1 - x^2)^n."""
    return math.sqrt(-math.expm1(-math.log(2.0) / n))


def _smallest_n(omega, cap=N_CAP):
    """Smallest n with 4 omega alpha_n < 2, i.e. alpha_n < 1 / (2 omega)."""
    if omega <= 0.0:
        return 1
    target = 1.0 / (2.0 * omega)
    if target >= alpha_n(1):
        return 1
    t2 = target * target
    if t2 >= 1.0:
        return 1
    guess = max(1, math.ceil(math.log(2.0) / -math.log1p(-t2)) - 2)
    n = guess
    while n <= cap and not alpha_n(n) < target:
        n += 1
    if n > cap:
        raise ValueError(
            f"required polynomial index exceeds the cap {cap}; omega={omega} is too large"
        )
    while n > 1 and alpha_n(n - 1) < target:
        n -= 1
    return n


@lru_cache(maxsize=64)
def _gl_rule(m):
    x, w = roots_legendre(m)
    return x, w


def _bump(n, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = 2.0 * np.exp(n * np.log1p(-x[inside] * x[inside]))
    return out


def _bump_prime(n, x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = -4.0 * n * x[inside] * np.exp((n - 1) * np.log1p(-x[inside] * x[inside]))
    return out


def _truncation_integral(omega, n, a, m):
    """Gauss-Legendre value of int_{-a}^{a} (sgn(x) u_n'(x) + omega u_n(x)) dx.

    The integrand is even, so integrate 2 * (u_n' + omega u_n) over [0, a];
    splitting at the sign kink keeps each panel polynomial.
    """
    x, w = _gl_rule(m)
    xs = 0.5 * a * (x + 1.0)
    ws = 0.5 * a * w
    vals = _bump_prime(n, xs) + omega * _bump(n, xs)
    return 2.0 * float(ws @ vals)


def verify_counterexample(omega_list, quadrature_n=64, tol=1e-10):
    """Evaluate the invariance-criterion functional for each shift omega.

    For each omega, picks the smallest n with 4 omega alpha_n < 2 and
    integrates adaptively (node doubling) until two successive
    Gauss-Legendre values agree to ``tol``.  A negative form value below
    the -2 + 4 omega alpha_n bound falsifies quasi-contractivity at that
    shift.
    """
    if quadrature_n < 2:
        raise ValueError("quadrature_n must be at least 2")
    reports = []
    for omega in omega_list:
        omega = float(omega)
        n = _smallest_n(omega)
        a = alpha_n(n)
        m = int(quadrature_n)
        val = _truncation_integral(omega, n, a, m)
        while m < 65536:
            nxt = _truncation_integral(omega, n, a, 2 * m)
            if abs(nxt - val) <= tol * max(1.0, abs(nxt)):
                val = nxt
                break
            val, m = nxt, 2 * m
        else:
            raise RuntimeError("counterexample quadrature did not converge")
        bound = -2.0 + 4.0 * omega * a
        violated = val <= bound + 1e-8 and val < 0.0
        reports.append(
            CounterexampleReport(
                omega, n, a, val, bound, "violated" if violated else "compatible"
            )
        )
    return reports


def invariance_form_value(form, u, omega, boundary_model="wentzell"):
    """Evaluate the shifted form on the L-infinity invariance test pair.

    Nodal truncation: v = clip(u, -1, 1) and w = u - v are the P1
    interpolants of (1 and |u|) sgn u and (|u| - 1)+ sgn u.  A
    quasi-contractive shift omega makes this value nonnegative for every
    state u.
    """
    u = np.asarray(getattr(u, "values", u), dtype=float)
    v = np.clip(u, -1.0, 1.0)
    w = u - v
    return form.form_value(v, w, omega=omega, boundary_mass=(boundary_model == "wentzell"))
