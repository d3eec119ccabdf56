"""Reference solvers producing ground-truth trajectories for the four benchmarks.

Implicit finite differences for the corrosion systems (monolithic Newton,
backward Euler), a semi-implicit linearised scheme for anisotropic crystal
growth, and a pseudo-spectral Crank-Nicolson/Picard scheme for spinodal
decomposition. Dirichlet rows replace the PDE at constrained nodes; Neumann
sides use mirror ghosts (first-derivative rows vanish there, second-derivative
rows become 2(f_1 - f_0)/dx^2); the spinodal grid is periodic.

Progress lines go to stderr as ``step=<n> t=<time> <diag>=<value>``.
"""

import sys
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from . import residuals as rs

KINDS = ("corrosion1d", "electropolish", "solidification", "spinodal")

NEWTON_TOL = 1e-9       # update AND free-row residual max-norm
NEWTON_MAX = 80
STEP_CAP = 0.2          # max-norm clamp on one Newton update of (phi, c)
SUBSTEP_DEPTH = 12      # dt halvings allowed when a Newton step stalls


class _Stall(Exception):
    """Internal: Newton ran out of iterations at the current step size."""
PICARD_MAX = 200

_PARAM_TYPES = {
    "corrosion1d": rs.CorrosionParams,
    "electropolish": rs.CorrosionParams,
    "solidification": rs.SolidificationParams,
    "spinodal": rs.SpinodalParams,
}


class SolverFailure(RuntimeError):
    """An implicit step failed to converge; carries the step index."""

    def __init__(self, step, scheme):
        super().__init__(f"solver-failure: {scheme} did not converge at step {step}")
        self.step = step


@dataclass(frozen=True)
class BenchmarkSpec:
    """Complete description of one ground-truth run (grid, scheme, IC seeds)."""

    kind: str
    params: object
    grid: tuple
    extent: tuple
    dt: float
    n_steps: int
    origin: tuple = None
    periodic: bool = False
    save_every: int = 1
    seed: int = 0
    interface_pos: float = 0.0   # x0 (1d) or y0 (electro-polish) in meters
    pert_sigma: float = 0.0      # interface perturbation scale sigma_a
    pert_modes: int = 0
    seed_radius: float = 0.0
    t_solid: float = 0.0         # undercooling inside / outside the seed;
    t_melt: float = 0.0          # growth needs t_melt < t_solid = melting level
    mean_c: float = 0.0
    n_pert: int = 0
    k_limit: int = 0
    pert_amp: float = 0.0
    picard_tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"invalid-input: unknown benchmark kind {self.kind!r}")
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        origin = self.origin if self.origin is not None else (0.0,) * len(self.grid)
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))
        if not len(self.grid) == len(self.extent) == len(self.origin):
            raise ValueError("invalid-shape: grid/extent/origin rank mismatch")
        if min(self.grid) < 4:
            raise ValueError("invalid-grid: need at least 4 nodes per axis")
        if self.dt <= 0 or self.n_steps < 1:
            raise ValueError("invalid-input: dt must be positive, n_steps >= 1")
        if self.save_every < 1 or self.n_steps % self.save_every:
            raise ValueError("invalid-input: save_every must divide n_steps")
        if not isinstance(self.params, _PARAM_TYPES[self.kind]):
            raise ValueError(f"invalid-input: wrong params type for {self.kind}")

    @property
    def n_saved(self):
        return self.n_steps // self.save_every + 1


@dataclass
class Trajectory:
    """Stored states of one run: fields maps name -> (n_saved, *grid) array."""

    spec: BenchmarkSpec
    fields: dict
    dt: float               # time between stored states

    def __post_init__(self):
        counts = {v.shape[0] for v in self.fields.values()}
        if len(counts) != 1:
            raise ValueError("invalid-shape: field stacks disagree on state count")

    @property
    def n_states(self):
        return next(iter(self.fields.values())).shape[0]

    def times(self):
        return self.dt * np.arange(self.n_states)


# -- spec factories with the benchmark-default grids and schedules -------------


def corrosion_1d_spec(kinetics=1e-9, n_nodes=101, dt=1.0, n_steps=100,
                      domain=100e-6, interface=35e-6, save_every=1):
    return BenchmarkSpec(kind="corrosion1d",
                         params=rs.CorrosionParams(kinetics=kinetics),
                         grid=(n_nodes,), extent=(domain,), dt=dt,
                         n_steps=n_steps, save_every=save_every,
                         interface_pos=interface)


def electropolish_spec(seed=0, kinetics=1e-10, nx=101, ny=51, dt=200.0,
                       n_steps=100, width=100e-6, height=50e-6,
                       interface=25e-6, pert_sigma=2e-6, pert_modes=10,
                       save_every=1):
    return BenchmarkSpec(kind="electropolish",
                         params=rs.CorrosionParams(kinetics=kinetics),
                         grid=(ny, nx), extent=(height, width), dt=dt,
                         n_steps=n_steps, save_every=save_every, seed=seed,
                         interface_pos=interface, pert_sigma=pert_sigma,
                         pert_modes=pert_modes)


def solidification_spec(latent=1.0, n=128, dt=0.01, n_steps=1000, save_every=5,
                        aniso_strength=0.1, seed_radius=0.05,
                        t_solid=0.0, t_melt=-0.6):
    params = rs.SolidificationParams(latent=latent, aniso_strength=aniso_strength)
    return BenchmarkSpec(kind="solidification", params=params, grid=(n, n),
                         extent=(2.0, 2.0), origin=(-1.0, -1.0), dt=dt,
                         n_steps=n_steps, save_every=save_every,
                         seed_radius=seed_radius, t_solid=t_solid, t_melt=t_melt)


def spinodal_spec(mobility=1.0, seed=0, n=64, dt=5e-5, n_steps=100, mean_c=0.0,
                  pert_amp=1e-4, n_pert=100, k_limit=15, picard_tol=1e-9,
                  save_every=1):
    return BenchmarkSpec(kind="spinodal", params=rs.SpinodalParams(mobility=mobility),
                         grid=(n, n), extent=(1.0, 1.0), periodic=True, dt=dt,
                         n_steps=n_steps, save_every=save_every, seed=seed,
                         mean_c=mean_c, n_pert=n_pert, k_limit=k_limit,
                         pert_amp=pert_amp, picard_tol=picard_tol)


# -- grids and initial conditions ----------------------------------------------


def grid_spacing(spec):
    denom = [n if spec.periodic else n - 1 for n in spec.grid]
    return tuple(ext / d for ext, d in zip(spec.extent, denom))

def grid_coords(spec):
    steps = grid_spacing(spec)
    return tuple(org + h * np.arange(n)
                 for n, org, h in zip(spec.grid, spec.origin, steps))


def _h_poly(phi):
    return phi * phi * (3.0 - 2.0 * phi)


def make_initial_condition(spec):
    """Seeded initial fields for spec.kind, as a dict of grid arrays."""
    p = spec.params
    if spec.kind == "corrosion1d":
        (x,) = grid_coords(spec)
        slope = np.sqrt(p.barrier / (2.0 * p.grad_coeff))
        phi = 0.5 * (1.0 - np.tanh(slope * (x - spec.interface_pos)))
        return {"phi": phi, "c": _h_poly(phi) * p.c_se}

    if spec.kind == "electropolish":
        y, x = grid_coords(spec)
        rng = np.random.default_rng(spec.seed)
        k = np.arange(1, spec.pert_modes + 1)
        amp = rng.normal(0.0, spec.pert_sigma / np.sqrt(k))
        xi = x / spec.extent[1]
        y_int = spec.interface_pos + amp @ np.cos(np.pi * np.outer(k, xi))
        slope = np.sqrt(p.barrier / (2.0 * p.grad_coeff))
        phi = 0.5 * (1.0 - np.tanh(slope * (y[:, None] - y_int[None, :])))
        return {"phi": phi, "c": _h_poly(phi) * p.c_se}

    if spec.kind == "solidification":
        y, x = grid_coords(spec)
        r = np.hypot(x[None, :], y[:, None])
        phi = np.tanh((spec.seed_radius - r) / (np.sqrt(2.0) * p.width))
        temp = np.where(r <= spec.seed_radius, spec.t_solid, spec.t_melt)
        return {"phi": phi, "temp": temp}

    # spinodal: band-limited cosine sum with integer wave numbers, so every
    # term has exactly zero grid mean and mean(c) == mean_c to rounding
    rng = np.random.default_rng(spec.seed)
    kxy = rng.integers(-spec.k_limit, spec.k_limit + 1, size=(spec.n_pert, 2))
    bad = np.flatnonzero((kxy == 0).all(axis=1))
    while bad.size:
        kxy[bad] = rng.integers(-spec.k_limit, spec.k_limit + 1,
                                size=(bad.size, 2))
        bad = bad[(kxy[bad] == 0).all(axis=1)]
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_pert)
    ny, nx = spec.grid
    xi = np.arange(nx) / nx
    eta = np.arange(ny) / ny
    c = np.full((ny, nx), spec.mean_c)
    for (kx, ky), ph in zip(kxy, phases):
        c = c + spec.pert_amp * np.cos(2.0 * np.pi * (kx * xi[None, :]
                                                      + ky * eta[:, None]) + ph)
    return {"c": c}


# -- boundary-aware stencil matrices -------------------------------------------


def _neumann_d1(n, dx):
    m = np.zeros((n, n))
    i = np.arange(1, n - 1)
    m[i, i - 1] = -0.5
    m[i, i + 1] = 0.5
    return m / dx          # mirror ghosts zero the boundary rows


def _neumann_d2(n, dx):
    m = np.zeros((n, n))
    i = np.arange(1, n - 1)
    m[i, i - 1] = m[i, i + 1] = 1.0
    m[i, i] = -2.0
    m[0, 0] = m[-1, -1] = -2.0
    m[0, 1] = m[-1, -2] = 2.0
    return m / dx ** 2


def _log(verbose, step, t, diag, value):
    if verbose:
        print(f"step={step} t={t:g} {diag}={value:g}", file=sys.stderr)


def _expect_kind(spec, kind):
    if spec.kind != kind:
        raise ValueError(f"invalid-input: expected a {kind} spec, got {spec.kind}")


def _square_spacing(spec):
    steps = grid_spacing(spec)
    if abs(steps[0] - steps[-1]) > 1e-12 * max(steps):
        raise ValueError("invalid-grid: square cells required")
    return steps[-1]


# -- corrosion 1d: monolithic Newton, interleaved banded Jacobian --------------


def solve_corrosion_1d(spec, verbose=False):
    """Backward-Euler dissolution run; Dirichlet metal (left) / electrolyte (right).

    Unknowns interleave as [phi_0, c_0, phi_1, c_1, ...] so the Jacobian is a
    heptadiagonal band solved directly. Newton accepts a step when both the
    update and the free-row residual max-norms fall below NEWTON_TOL.
    """
    _expect_kind(spec, "corrosion1d")
    p = spec.params
    (n,) = spec.grid
    (dx,) = grid_spacing(spec)
    dt = spec.dt

    ic = make_initial_condition(spec)
    phi, c = ic["phi"], ic["c"]
    phi[0] = c[0] = 1.0          # boundary data holds from t = 0
    phi[-1] = c[-1] = 0.0

    dc_eq = p.c_se - p.c_le
    two_am = 2.0 * p.free_energy * p.diffusivity
    two_al = 2.0 * p.free_energy * p.kinetics
    la = p.kinetics * p.grad_coeff
    lw = p.kinetics * p.barrier
    wx = 1.0 / dx ** 2

    phis = np.empty((spec.n_saved, n))
    cs = np.empty((spec.n_saved, n))
    phis[0], cs[0] = phi, c

    rows_p = 2 * np.arange(1, n - 1)
    rows_c = rows_p + 1
    ab = np.zeros((7, 2 * n))    # bands, ab[3 + row - col, col]

    def band_put(row, col, val):
        ab[3 + row - col, col] = val

    def res_vec(phi_n, c_n, p_try, c_try, dt_loc):
        r_ph, r_tr = rs.residual_corrosion(phi_n, c_n, p_try, c_try, p,
                                           dt_loc, dx)
        r = np.empty(2 * n)
        r[0::2], r[1::2] = r_ph, r_tr
        r[0], r[1] = p_try[0] - 1.0, c_try[0] - 1.0
        r[-2], r[-1] = p_try[-1], c_try[-1]
        return r

    def newton_step(phi_n, c_n, dt_loc):
        p_new, c_new = phi_n.copy(), c_n.copy()
        d_max = np.inf
        row_scale = None
        for it in range(NEWTON_MAX + 1):
            r = res_vec(phi_n, c_n, p_new, c_new, dt_loc)
            # residual rows are compared against the Jacobian row magnitude:
            # at large L the phi equation is O(1e8) per unit phi, so an
            # absolute gate would sit below the float64 rounding floor
            if (d_max <= NEWTON_TOL and row_scale is not None
                    and np.max(np.abs(r) / row_scale) <= NEWTON_TOL):
                return p_new, c_new
            if it == NEWTON_MAX:
                raise _Stall
            ph = p_new[1:-1]
            hp_all = 6.0 * p_new * (1.0 - p_new)
            hp = hp_all[1:-1]
            hpp = 6.0 - 12.0 * ph
            gpp = 2.0 - 12.0 * ph + 12.0 * ph * ph
            bracket = c_new[1:-1] - _h_poly(ph) * dc_eq - p.c_le
            ab[:] = 0.0
            edge = np.full(n - 2, -la * wx)
            band_put(rows_p, rows_p - 2, edge)
            band_put(rows_p, rows_p + 2, edge)
            band_put(rows_p, rows_p,
                     1.0 / dt_loc + two_al * dc_eq * (hp * hp * dc_eq - bracket * hpp)
                     + lw * gpp + 2.0 * la * wx)
            band_put(rows_p, rows_c, -two_al * dc_eq * hp)
            side = np.full(n - 2, -two_am * wx)
            band_put(rows_c, rows_c - 2, side)
            band_put(rows_c, rows_c + 2, side)
            band_put(rows_c, rows_c, np.full(n - 2, 1.0 / dt_loc + 2.0 * two_am * wx))
            coef = two_am * dc_eq * wx
            band_put(rows_c, rows_p - 2, coef * hp_all[:-2])
            band_put(rows_c, rows_p, -2.0 * coef * hp)
            band_put(rows_c, rows_p + 2, coef * hp_all[2:])
            ab[3, 0] = ab[3, 1] = ab[3, -2] = ab[3, -1] = 1.0
            row_scale = np.zeros(2 * n)
            for k in range(-3, 4):
                row_scale += np.abs(np.roll(ab[3 + k], k))
            delta = solve_banded((3, 3), ab, -r)
            full = np.max(np.abs(delta))
            # both fields are O(1); capping the update length keeps stiff
            # kinetics (large L) from overshooting out of the Newton basin
            lam = min(1.0, STEP_CAP / full) if full > STEP_CAP else 1.0
            d_max = lam * full
            p_new += lam * delta[0::2]
            c_new += lam * delta[1::2]

    def advance(phi_n, c_n, dt_loc, depth):
        # stiff steps fall back to two half steps; accuracy only improves
        try:
            return newton_step(phi_n, c_n, dt_loc)
        except _Stall:
            if depth == 0:
                raise
            p_mid, c_mid = advance(phi_n, c_n, 0.5 * dt_loc, depth - 1)
            return advance(p_mid, c_mid, 0.5 * dt_loc, depth - 1)

    saved = 1
    for step in range(1, spec.n_steps + 1):
        try:
            p_new, c_new = advance(phi, c, dt, SUBSTEP_DEPTH)
        except _Stall:
            raise SolverFailure(step, "newton") from None
        p_new[0] = c_new[0] = 1.0    # identity rows leave ~1e-15 pivot dust
        p_new[-1] = c_new[-1] = 0.0
        phi, c = p_new, c_new
        if step % spec.save_every == 0:
            phis[saved], cs[saved] = phi, c
            saved += 1
            _log(verbose, step, step * dt, "newton", saved)
    return Trajectory(spec=spec, fields={"phi": phis, "c": cs},
                      dt=dt * spec.save_every)


# -- electro-polishing: same system in 2d, sparse Newton ------------------------


def _lap_dirichlet_y(ny, nx, dx):
    """2d Laplacian rows for the polishing grid: mirror-Neumann in x, central
    in y, zeroed at the Dirichlet rows iy = 0 and ny-1 (replaced at system
    level by identity rows)."""
    d2y = rs.fd_matrix(ny, 2, dx).copy()
    d2y[0] = 0.0
    d2y[-1] = 0.0
    lap = (sparse.kron(sparse.eye(ny), sparse.csr_matrix(_neumann_d2(nx, dx)))
           + sparse.kron(sparse.csr_matrix(d2y), sparse.eye(nx)))
    keep = np.ones((ny, nx))
    keep[0] = keep[-1] = 0.0
    return (sparse.diags(keep.ravel()) @ lap).tocsr()


def solve_corrosion_2d(spec, verbose=False):
    """Backward-Euler polishing run; Dirichlet bottom (metal) / top, Neumann sides."""
    _expect_kind(spec, "electropolish")
    p = spec.params
    ny, nx = spec.grid
    dx = _square_spacing(spec)
    dt = spec.dt
    n_all = ny * nx

    ic = make_initial_condition(spec)
    phi, c = ic["phi"], ic["c"]
    phi[0] = c[0] = 1.0
    phi[-1] = c[-1] = 0.0

    dc_eq = p.c_se - p.c_le
    two_am = 2.0 * p.free_energy * p.diffusivity
    two_al = 2.0 * p.free_energy * p.kinetics
    la = p.kinetics * p.grad_coeff
    lw = p.kinetics * p.barrier

    lap = _lap_dirichlet_y(ny, nx, dx)
    keep = np.ones(2 * n_all)
    for block in (0, n_all):
        keep[block:block + nx] = 0.0
        keep[block + n_all - nx:block + n_all] = 0.0
    sel = sparse.diags(keep)
    fix = sparse.diags(1.0 - keep)
    eye_dt = sparse.diags(np.full(n_all, 1.0 / dt))

    def lap_of(f):
        return (lap @ f.ravel()).reshape(ny, nx)

    phis = np.empty((spec.n_saved, ny, nx))
    cs = np.empty_like(phis)
    phis[0], cs[0] = phi, c

    saved = 1
    for step in range(1, spec.n_steps + 1):
        p_new, c_new = phi.copy(), c.copy()
        d_max = np.inf
        for it in range(NEWTON_MAX + 1):
            h = _h_poly(p_new)
            hp = 6.0 * p_new * (1.0 - p_new)
            gp = 2.0 * p_new - 6.0 * p_new ** 2 + 4.0 * p_new ** 3
            bracket = c_new - h * dc_eq - p.c_le
            r_ph = ((p_new - phi) / dt - two_al * dc_eq * bracket * hp
                    + lw * gp - la * lap_of(p_new))
            r_tr = ((c_new - c) / dt - two_am * lap_of(c_new)
                    + two_am * dc_eq * lap_of(h))
            r_ph[0], r_tr[0] = p_new[0] - 1.0, c_new[0] - 1.0
            r_ph[-1], r_tr[-1] = p_new[-1], c_new[-1]
            r = np.concatenate([r_ph.ravel(), r_tr.ravel()])
            if d_max <= NEWTON_TOL and np.max(np.abs(r)) <= NEWTON_TOL:
                break
            if it == NEWTON_MAX:
                raise SolverFailure(step, "newton")
            hpp = 6.0 - 12.0 * p_new
            gpp = 2.0 - 12.0 * p_new + 12.0 * p_new ** 2
            diag_pp = (1.0 / dt + two_al * dc_eq * (hp * hp * dc_eq - bracket * hpp)
                       + lw * gpp)
            a11 = sparse.diags(diag_pp.ravel()) - la * lap
            a12 = sparse.diags((-two_al * dc_eq * hp).ravel())
            a21 = (two_am * dc_eq) * (lap @ sparse.diags(hp.ravel()))
            a22 = eye_dt - two_am * lap
            jac = sel @ sparse.bmat([[a11, a12], [a21, a22]], format="csr") + fix
            delta = splu(jac.tocsc()).solve(-r)
            d_max = np.max(np.abs(delta))
            p_new += delta[:n_all].reshape(ny, nx)
            c_new += delta[n_all:].reshape(ny, nx)
        p_new[0] = c_new[0] = 1.0
        p_new[-1] = c_new[-1] = 0.0
        phi, c = p_new, c_new
        if step % spec.save_every == 0:
            phis[saved], cs[saved] = phi, c
            saved += 1
            _log(verbose, step, step * dt, "newton", it)
    return Trajectory(spec=spec, fields={"phi": phis, "c": cs},
                      dt=dt * spec.save_every)


# -- solidification: semi-implicit phase update, implicit heat ------------------


def _solid_machine(spec):
    """Shared per-spec machinery: returns advance(phi_ref, temp_ref, phi_old,
    temp_old) performing one linearised step with coefficients frozen at the
    ref fields and the time derivative taken against the old fields."""
    p = spec.params
    ny, nx = spec.grid
    dx = _square_spacing(spec)
    dt = spec.dt
    eps2 = p.width ** 2
    rho_dt = p.mobility / dt
    n_all = ny * nx

    d1x = _neumann_d1(nx, dx)
    d1y = _neumann_d1(ny, dx)
    k1x = sparse.kron(sparse.eye(ny), sparse.csr_matrix(d1x)).tocsr()
    k1y = sparse.kron(sparse.csr_matrix(d1y), sparse.eye(nx)).tocsr()
    lsum = (sparse.kron(sparse.eye(ny), sparse.csr_matrix(_neumann_d2(nx, dx)))
            + sparse.kron(sparse.csr_matrix(_neumann_d2(ny, dx)),
                          sparse.eye(nx))).tocsr()
    heat_lu = splu((sparse.diags(np.full(n_all, 1.0 / dt))
                    - p.diffusivity * lsum).tocsc())

    def advance(phi_ref, temp_ref, phi_old, temp_old):
        gx = phi_ref @ d1x.T
        gy = d1y @ phi_ref
        kappa, (h_x, h_y) = rs.anisotropy((gx, gy), p.aniso_strength,
                                          p.aniso_mode)
        k2 = kappa * kappa
        g2 = gx * gx + gy * gy
        torque = (kappa * g2 * h_x) @ d1x.T + d1y @ (kappa * g2 * h_y)
        lin = (3.0 * phi_ref ** 2 - 1.0) / eps2
        mat = (sparse.diags((rho_dt + lin).ravel())
               - sparse.diags(k2.ravel()) @ lsum
               - sparse.diags((k2 @ d1x.T).ravel()) @ k1x
               - sparse.diags((d1y @ k2).ravel()) @ k1y)
        rhs = (rho_dt * phi_old + torque + 2.0 * phi_ref ** 3 / eps2
               - (p.kinetic / p.width) * (1.0 - phi_ref ** 2) ** 2 * temp_ref)
        phi_next = splu(mat.tocsc()).solve(rhs.ravel()).reshape(ny, nx)
        src = p.latent * (1.0 - phi_next ** 2) ** 2 * (phi_next - phi_old) / dt
        temp_next = heat_lu.solve((temp_old / dt + src).ravel()).reshape(ny, nx)
        return phi_next, temp_next

    return advance


def solve_solidification(spec, verbose=False):
    """Dendritic growth run: per step one linear phase solve with the double
    well linearised at phi^n and anisotropy frozen at theta^n, then the
    implicit heat solve sourced by the latent release of the fresh update."""
    _expect_kind(spec, "solidification")
    advance = _solid_machine(spec)
    ic = make_initial_condition(spec)
    phi, temp = ic["phi"], ic["temp"].astype(np.float64)

    ny, nx = spec.grid
    phis = np.empty((spec.n_saved, ny, nx))
    temps = np.empty_like(phis)
    phis[0], temps[0] = phi, temp

    saved = 1
    for step in range(1, spec.n_steps + 1):
        phi, temp = advance(phi, temp, phi, temp)
        if step % spec.save_every == 0:
            phis[saved], temps[saved] = phi, temp
            saved += 1
            frac = np.count_nonzero(phi > 0.0) / phi.size
            _log(verbose, step, step * spec.dt, "frac", frac)
    return Trajectory(spec=spec, fields={"phi": phis, "temp": temps},
                      dt=spec.dt * spec.save_every)


def solidification_implicit_step(spec, phi_n, temp_n, tol=1e-9, max_iters=80):
    """One fully implicit step: Picard-iterate the linearised update with
    coefficients at the current iterate until the coupled backward-Euler
    residual max-norm falls below tol. Returns (phi, temp, iterations)."""
    _expect_kind(spec, "solidification")
    advance = _solid_machine(spec)
    dx = _square_spacing(spec)
    phi_k, t_k = phi_n, temp_n
    for it in range(1, max_iters + 1):
        phi_k, t_k = advance(phi_k, t_k, phi_n, temp_n)
        r_ph, r_t = rs.residual_solidification(phi_n, temp_n, phi_k, t_k,
                                               spec.params, spec.dt, dx)
        if max(np.max(np.abs(r_ph)), np.max(np.abs(r_t))) <= tol:
            return phi_k, t_k, it
    raise SolverFailure(1, "picard")


# -- spinodal decomposition: pseudo-spectral Crank-Nicolson ---------------------


def solve_spinodal(spec, verbose=False):
    """Conserved phase separation on the periodic grid. Each step solves the
    Crank-Nicolson update by Picard iteration in rfft space; the k = 0 row is
    exactly c_hat_next(0) = c_hat_n(0), so the mean never drifts."""
    _expect_kind(spec, "spinodal")
    p = spec.params
    ny, nx = spec.grid
    if spec.extent[0] != spec.extent[1]:
        raise ValueError("invalid-grid: square domain required")
    length = spec.extent[0]
    k2 = -rs.laplacian_symbol(ny, nx, length)
    mfac = spec.dt * p.mobility
    stiff = mfac * p.grad_coeff * (k2 * k2)
    denom = 2.0 + stiff
    lin = 2.0 - stiff

    c = make_initial_condition(spec)["c"]
    cs = np.empty((spec.n_saved, ny, nx))
    cs[0] = c

    saved = 1
    for step in range(1, spec.n_steps + 1):
        c_hat = np.fft.rfft2(c)
        f_hat_n = np.fft.rfft2(c ** 3 - c)
        cur = c
        for it in range(1, PICARD_MAX + 1):
            f_hat = np.fft.rfft2(cur ** 3 - cur)
            new = np.fft.irfft2((lin * c_hat - mfac * k2 * (f_hat + f_hat_n))
                                / denom, s=(ny, nx))
            gap = np.max(np.abs(new - cur))
            cur = new
            if gap < spec.picard_tol:
                break
        else:
            raise SolverFailure(step, "picard")
        c = cur
        if step % spec.save_every == 0:
            cs[saved] = c
            saved += 1
            _log(verbose, step, step * spec.dt, "picard", it)
    return Trajectory(spec=spec, fields={"c": cs}, dt=spec.dt * spec.save_every)


def spinodal_energy(c, grad_coeff, domain_length=1.0):
    """Discrete free energy of the separation run, with the solver's spectral
    gradients: sum of 1/4 (c^2-1)^2 + grad_coeff/2 |grad c|^2 times cell area."""
    gx = rs.spectral_derivative(c, 1, -1, domain_length)
    gy = rs.spectral_derivative(c, 1, -2, domain_length)
    ny, nx = c.shape
    cell = (domain_length / nx) * (domain_length / ny)
    dens = 0.25 * (c * c - 1.0) ** 2 + 0.5 * grad_coeff * (gx * gx + gy * gy)
    return float(np.sum(dens) * cell)


_SOLVERS = {
    "corrosion1d": solve_corrosion_1d,
    "electropolish": solve_corrosion_2d,
    "solidification": solve_solidification,
    "spinodal": solve_spinodal,
}


def solve(spec, verbose=False):
    """Dispatch to the solver matching spec.kind."""
    return _SOLVERS[spec.kind](spec, verbose=verbose)
