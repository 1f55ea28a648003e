"""Time-stepping schemes for the mild (convolution) form of the equation.

Three one-step maps share the noise handling:

* ``exp_euler``: exponential Euler, u_{n+1} = exp(-dt A)[u_n + increments],
  the direct discretization of the variation-of-constants form;
* ``resolvent_implicit``: backward-Euler resolvent step,
  u_{n+1} = (I + dt A)^{-1}[u_n + increments], unconditionally stable;
* ``yosida_explicit``: explicit Euler with A replaced by its bounded
  regularization A_eps, the scheme behind semigroup-approximation studies.

Jumps are binned into their grid cell and evaluated at the left state (the
discrete stand-in for evaluating the integrand at u(s-)), and the jump
compensator is subtracted cellwise in closed form, so the discrete noise
increment is exactly centered.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, ConfigurationError, StiffnessWarning
from .model import EquationSpec, MarkSpace
from .noise import PoissonPath, TimeGrid, WienerPath, jump_cell_counts, quadratic_mark_sum
from .space import SpectralOperator

__all__ = [
    "SCHEMES",
    "SchemeConfig",
    "Trajectory",
    "solve_exp_euler",
    "solve_resolvent_implicit",
    "solve_yosida_explicit",
    "solve_scheme",
    "solve_linear_data",
    "regularized_coupling_identity",
    "ito_energy_residual",
    "ito_energy_terms",
]

SCHEMES = ("exp_euler", "resolvent_implicit", "yosida_explicit")

_REL_TOL = 1e-12


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme identifier plus its step size; epsilon only for yosida_explicit."""

    scheme: str
    dt: float
    epsilon: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not self.dt > 0.0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.scheme == "yosida_explicit" and not (self.epsilon or 0.0) > 0.0:
            raise ConfigurationError("yosida_explicit requires epsilon > 0")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on a grid plus the metadata needed to reproduce them.

    ``integrability`` is the a posteriori pathwise integral of
    |F(u)| + |B(t, u)|_Q^2 + |G(t, u, .)|_m^2 over [0, T]; uniqueness
    experiments require it to be finite before a run may enter them.
    """

    grid: TimeGrid
    states: np.ndarray
    spec_fingerprint: str
    wiener_seed: int
    poisson_seed: int
    scheme: SchemeConfig
    integrability: float

    def __post_init__(self):
        if self.states.shape[0] != self.grid.steps + 1:
            raise ValueError("states must hold one row per grid node")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _validate_noise(spec: EquationSpec, noise, dt: float):
    wiener, poisson = noise
    grid = wiener.grid
    if abs(grid.dt - dt) > _REL_TOL * max(dt, 1.0):
        raise ConfigurationError(f"wiener grid dt={grid.dt} does not match requested dt={dt}")
    if abs(grid.horizon - spec.T) > _REL_TOL * max(spec.T, 1.0):
        raise ConfigurationError(f"wiener horizon {grid.horizon} does not match T={spec.T}")
    if wiener.q.shape != spec.B.q.shape or not np.allclose(wiener.q, spec.B.q, rtol=0, atol=1e-15):
        raise ConfigurationError("wiener path covariance differs from the equation's Q")
    if abs(poisson.horizon - spec.T) > _REL_TOL * max(spec.T, 1.0):
        raise ConfigurationError(f"poisson horizon {poisson.horizon} does not match T={spec.T}")
    if poisson.atom_count != spec.marks.atom_count:
        raise ConfigurationError("poisson path was sampled from a different mark space")
    return wiener, poisson, grid


def _horner(coeffs, u):
    out = np.full_like(u, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * u + c
    return out


def _solve_loop(spec: EquationSpec, noise, dt: float, config: SchemeConfig, one_step):
    """Common driver: steps, blow-up policy, stiffness monitor, integrability tally."""
    wiener, poisson, grid = _validate_noise(spec, noise, dt)
    counts = jump_cell_counts(poisson, grid)
    mark_w = spec.marks.weight_array
    fcoeffs = spec.F.coefficients
    dcoeffs = spec.F.derivative_coefficients()
    drift_varies = len(dcoeffs) > 1
    flat_cap = dt * abs(dcoeffs[0]) if len(dcoeffs) == 1 else 0.0
    space = spec.space
    w = space.weight
    q = spec.B.q
    B, G = spec.B, spec.G
    increments = wiener.increments
    times = grid.times

    u = spec.u0.copy()
    states = np.empty((grid.steps + 1, spec.A.dim))
    states[0] = u
    integ = 0.0
    warned = flat_cap >= 1.0
    if warned:
        warnings.warn(
            f"explicit drift step outside safety region: dt*|f'| = {flat_cap:.3g} >= 1",
            StiffnessWarning, stacklevel=3)
    for n in range(grid.steps):
        t = times[n]
        fu = _horner(fcoeffs, u) if fcoeffs else np.zeros_like(u)
        if drift_varies and not warned:
            cap = dt * float(np.abs(_horner(dcoeffs, u)).max())
            if cap >= 1.0:
                warnings.warn(
                    f"explicit drift step outside safety region at step {n}: "
                    f"dt*max|f'(u)| = {cap:.3g} >= 1",
                    StiffnessWarning,
                    stacklevel=3,
                )
                warned = True
        b_mat = B(t, u)
        g_mat = G(t, u)
        increment = b_mat @ increments[n]
        increment += g_mat @ counts[n]
        increment -= dt * (g_mat @ mark_w)
        integ += dt * (
            np.sqrt(w * np.dot(fu, fu))
            + w * ((b_mat * b_mat).sum(axis=0) @ q)
            + w * ((g_mat * g_mat).sum(axis=0) @ mark_w)
        )
        u = one_step(u, fu, increment)
        if not np.isfinite(u).all():
            raise BlowUpError(
                f"{config.scheme} produced a non-finite state at step {n + 1} "
                f"(t={grid.times[n + 1]:.6g})",
                step=n + 1,
                time=float(grid.times[n + 1]),
            )
        states[n + 1] = u
    states.setflags(write=False)
    return Trajectory(
        grid=grid,
        states=states,
        spec_fingerprint=spec.fingerprint(),
        wiener_seed=wiener.seed,
        poisson_seed=poisson.seed,
        scheme=config,
        integrability=float(integ),
    )


def solve_exp_euler(spec: EquationSpec, noise, dt: float) -> Trajectory:
    """Exponential Euler: u_{n+1} = exp(-dt A)[u_n - dt F(u_n) + noise increment].

    Exact for the pure semigroup flow (F = B = G = 0) and the order-one
    discretization of the convolution form otherwise.
    """
    config = SchemeConfig("exp_euler", dt)
    A = spec.A
    prop = (A.eigenvectors * A.semigroup_factors(dt)) @ (A.space.weight * A.eigenvectors.T)

    def one_step(u, fu, increment):
        return prop @ (u - dt * fu + increment)

    return _solve_loop(spec, noise, dt, config, one_step)


def solve_resolvent_implicit(spec: EquationSpec, noise, dt: float) -> Trajectory:
    """Backward-Euler resolvent step; the linear part is unconditionally stable."""
    config = SchemeConfig("resolvent_implicit", dt)
    A = spec.A
    prop = (A.eigenvectors * A.resolvent_factors(dt)) @ (A.space.weight * A.eigenvectors.T)

    def one_step(u, fu, increment):
        return prop @ (u - dt * fu + increment)

    return _solve_loop(spec, noise, dt, config, one_step)


def solve_yosida_explicit(spec: EquationSpec, noise, dt: float, epsilon: float) -> Trajectory:
    """Explicit Euler with the bounded regularization A_eps in place of A.

    Requires dt * lam_max / (1 + eps * lam_max) < 2, checked before stepping.
    """
    config = SchemeConfig("yosida_explicit", dt, epsilon)
    A = spec.A
    yos = A.yosida_factors(epsilon)
    cap = dt * float(yos.max())
    if cap >= 2.0:
        raise ConfigurationError(
            f"yosida_explicit unstable: dt*lam_max/(1+eps*lam_max) = {cap:.3g} >= 2 "
            f"(dt={dt}, eps={epsilon})"
        )
    prop = np.eye(A.dim) - dt * (A.eigenvectors * yos) @ (A.space.weight * A.eigenvectors.T)

    def one_step(u, fu, increment):
        return prop @ u - dt * fu + increment

    return _solve_loop(spec, noise, dt, config, one_step)


def solve_scheme(spec: EquationSpec, noise, dt: float, scheme: str,
                 epsilon: float | None = None) -> Trajectory:
    """Dispatch by scheme name."""
    if scheme == "exp_euler":
        return solve_exp_euler(spec, noise, dt)
    if scheme == "resolvent_implicit":
        return solve_resolvent_implicit(spec, noise, dt)
    if scheme == "yosida_explicit":
        if epsilon is None:
            raise ConfigurationError("yosida_explicit requires epsilon")
        return solve_yosida_explicit(spec, noise, dt, epsilon)
    raise ConfigurationError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")


# ---------------------------------------------------------------------------
# Linear-data equations: dy + Ay dt + g dt = C dW + D dmu_bar, y(0) = 0.
# Coefficients are per-cell arrays with no state dependence, which is what
# makes the resolvent-commutation identity below exact at the discrete level.
# ---------------------------------------------------------------------------


def _as_linear_data(A: SpectralOperator, g, C, D, grid: TimeGrid, marks: MarkSpace):
    for name, val in (("g", g), ("C", C), ("D", D)):
        if callable(val):
            raise TypeError(f"{name} must be a per-cell array; state-dependent "
                            "coefficients are not allowed for linear-data runs")
    g = np.asarray(g, dtype=float)
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    n = A.dim
    if g.shape != (grid.steps, n):
        raise ValueError(f"g must have shape ({grid.steps}, {n}), got {g.shape}")
    if C.ndim != 3 or C.shape[:2] != (grid.steps, n):
        raise ValueError(f"C must have shape ({grid.steps}, {n}, d), got {C.shape}")
    if D.shape != (grid.steps, n, marks.atom_count):
        raise ValueError(
            f"D must have shape ({grid.steps}, {n}, {marks.atom_count}), got {D.shape}")
    return g, C, D


def solve_linear_data(A: SpectralOperator, g, C, D, wiener: WienerPath,
                      poisson: PoissonPath, marks: MarkSpace,
                      scheme: str = "exp_euler") -> np.ndarray:
    """Solve the linear-data equation from y(0) = 0; returns states (steps+1, n)."""
    grid = wiener.grid
    g, C, D = _as_linear_data(A, g, C, D, grid, marks)
    if C.shape[2] != wiener.modes:
        raise ValueError(f"C has {C.shape[2]} columns but the path has {wiener.modes} modes")
    if scheme == "exp_euler":
        factors = A.semigroup_factors(grid.dt)
    elif scheme == "resolvent_implicit":
        factors = A.resolvent_factors(grid.dt)
    else:
        raise ConfigurationError(f"linear-data solves support exp_euler and "
                                 f"resolvent_implicit, got {scheme!r}")
    counts = jump_cell_counts(poisson, grid)
    mark_w = marks.weight_array
    dt = grid.dt
    y = np.zeros(A.dim)
    states = np.zeros((grid.steps + 1, A.dim))
    for n in range(grid.steps):
        b = -dt * g[n] + C[n] @ wiener.increments[n] + D[n] @ counts[n] - dt * (D[n] @ mark_w)
        y = A.synthesize(factors * A.coords(y + b))
        states[n + 1] = y
    return states


def regularized_coupling_identity(A: SpectralOperator, g, C, D, noise, marks: MarkSpace,
                                  epsilon: float, scheme: str = "exp_euler") -> float:
    """Residual of the exact discrete regularization identity.

    Solves the linear-data equation once with (g, C, D) giving y and once
    with the resolvent-mollified data giving y_eps, on the same path and
    scheme, and returns sup_n |y_eps(t_n) - (I + eps A)^{-1} y(t_n)|.  The
    identity is exact at the discrete level because the resolvent commutes
    with the diagonal one-step map, so the residual is floating-point noise.
    """
    wiener, poisson = noise
    grid = wiener.grid
    g, C, D = _as_linear_data(A, g, C, D, grid, marks)
    J = A.resolvent_matrix(epsilon)
    g_eps = g @ J  # J is symmetric, so right-multiplication applies it rowwise
    C_eps = np.einsum("ij,mjd->mid", J, C)
    D_eps = np.einsum("ij,mjd->mid", J, D)
    y = solve_linear_data(A, g, C, D, wiener, poisson, marks, scheme)
    y_eps = solve_linear_data(A, g_eps, C_eps, D_eps, wiener, poisson, marks, scheme)
    gap = y_eps - y @ J
    return float(np.sqrt(A.space.sq_norms(gap)).max())


def ito_energy_terms(A: SpectralOperator, g, C, D, noise, marks: MarkSpace) -> dict:
    """Both sides of the discrete energy identity for the square of the norm.

    The path is stepped with plain explicit Euler (A is bounded here), for
    which the identity |y_N|^2 = 2 sum <y_n, b_n> + sum |b_n|^2 telescopes
    exactly; the reported sides are

      lhs = |y(T)|^2 + 2 sum <A y_n, y_n> dt + 2 sum <g_n, y_n> dt
      rhs = martingale terms + sum |C_n dW_n|^2 + sum over jumps |D|^2

    with the quadratic terms taken as realized (the realized Wiener bracket
    and the realized jump sum); the deterministic forms |C|_Q^2 dt and the
    jump compensator agree with these only in expectation, which is the
    isometry/compensator identity tested elsewhere.
    """
    wiener, poisson = noise
    grid = wiener.grid
    g, C, D = _as_linear_data(A, g, C, D, grid, marks)
    dt = grid.dt
    cap = dt * A.lambda_max
    if cap >= 2.0:
        raise ConfigurationError(
            f"explicit Euler unstable for the energy identity: dt*lam_max = {cap:.3g} >= 2")
    counts = jump_cell_counts(poisson, grid)
    mark_w = marks.weight_array
    space = A.space
    w = space.weight

    y = np.zeros(A.dim)
    quad_drift = 0.0       # 2 sum <A y_n + 0, y_n> dt and <g_n, y_n> dt pieces
    drift_g = 0.0
    mart_wiener = 0.0
    mart_jump = 0.0
    bracket_wiener = 0.0
    for n in range(grid.steps):
        wiener_inc = C[n] @ wiener.increments[n]
        jump_inc = D[n] @ counts[n]
        comp_inc = dt * (D[n] @ mark_w)
        quad_drift += 2.0 * dt * w * float(np.dot(A.apply(y), y))
        drift_g += 2.0 * dt * w * float(np.dot(g[n], y))
        mart_wiener += 2.0 * w * float(np.dot(y, wiener_inc))
        mart_jump += 2.0 * w * (float(np.dot(y, jump_inc)) - float(np.dot(y, comp_inc)))
        bracket_wiener += w * float(np.dot(wiener_inc, wiener_inc))
        y = y - dt * (A.apply(y) + g[n]) + wiener_inc + jump_inc - comp_inc
    jump_sq, _ = quadratic_mark_sum(D, poisson, marks, grid, grid.horizon, space)
    lhs = w * float(np.dot(y, y)) + quad_drift + drift_g
    rhs = mart_wiener + mart_jump + bracket_wiener + jump_sq
    return {
        "lhs": lhs,
        "rhs": rhs,
        "martingale_wiener": mart_wiener,
        "martingale_jump": mart_jump,
        "bracket_wiener": bracket_wiener,
        "jump_square_sum": jump_sq,
        "final_sq_norm": w * float(np.dot(y, y)),
    }


def ito_energy_residual(A: SpectralOperator, g, C, D, noise, marks: MarkSpace) -> float:
    """Absolute discrepancy of the discrete energy identity at the horizon."""
    terms = ito_energy_terms(A, g, C, D, noise, marks)
    return abs(terms["lhs"] - terms["rhs"])
