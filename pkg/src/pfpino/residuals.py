"""Spatial derivative stencils and implicit-in-time PDE residuals.

The residual of each benchmark equation is evaluated with the solution fields
of the *next* time level inserted into the spatial operators (backward-Euler
form), matching how the reference solvers discretise the dynamics.

Every function here accepts either plain numpy arrays or autodiff Tensors and
returns the same kind, so the reference solvers and the physics-informed loss
share one discretisation. Fields are bare grids shaped (nx,) or (ny, nx), or
batched grids carrying a leading (batch, channel) pair.
"""

from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import autodiff as ad

# gradient magnitudes below this are treated as critical points of phi where
# the anisotropy direction is undefined; kappa falls back to 1 and H to 0
GRAD_FLOOR = 1e-8


# -- model constants ----------------------------------------------------------


@dataclass(frozen=True)
class CorrosionParams:
    """Constants of the two-phase metal dissolution model (SI units)."""

    kinetics: float = 1.0e-10     # interface mobility L
    diffusivity: float = 7.94e-18  # ion transport coefficient M
    free_energy: float = 5.35e7   # curvature A of the chemical free energy
    c_se: float = 1.0             # equilibrium solid concentration (normalised)
    c_le: float = 0.036           # equilibrium liquid concentration
    barrier: float = 1.76e7      # double-well height w
    grad_coeff: float = 1.02e-4   # gradient energy coefficient alpha
    thickness: float = 1.0e-5     # interface thickness scale

    def __post_init__(self):
        for f in dc_fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"invalid-input: {f.name} must be positive")
        if self.c_se <= self.c_le:
            raise ValueError("invalid-input: c_se must exceed c_le")
        if self.c_se > 1.0:
            raise ValueError("invalid-input: c_se is normalised, must be <= 1")


@dataclass(frozen=True)
class SolidificationParams:
    """Constants of the anisotropic crystal growth model (dimensionless)."""

    mobility: float = 1.0e3       # rho
    width: float = 0.015          # interface width eps
    kinetic: float = 4.0e2        # undercooling coupling lam
    diffusivity: float = 2.5e-3   # heat diffusivity D
    latent: float = 1.0           # latent heat coefficient K (scenario knob)
    aniso_strength: float = 0.1   # sigma
    aniso_mode: int = 4

    def __post_init__(self):
        for name in ("mobility", "width", "kinetic", "diffusivity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"invalid-input: {name} must be positive")
        # latent = 0 (no heat release) and aniso_strength = 0 (isotropic) are
        # meaningful degenerate cases
        if self.latent < 0 or self.aniso_strength < 0:
            raise ValueError("invalid-input: latent and aniso_strength must be >= 0")
        if self.aniso_mode != 4:
            raise ValueError("unsupported-mode: only four-fold anisotropy is implemented")


@dataclass(frozen=True)
class SpinodalParams:
    """Constants of the conserved phase-separation model (dimensionless)."""

    mobility: float = 1.0         # M
    grad_coeff: float = 9.8e-4    # gradient energy coefficient
    potential: str = "cubic"      # marks f'(c) = c^3 - c

    def __post_init__(self):
        if self.mobility <= 0 or self.grad_coeff <= 0:
            raise ValueError("invalid-input: mobility and grad_coeff must be positive")
        if self.potential != "cubic":
            raise ValueError("invalid-input: only the cubic well derivative c^3 - c "
                             "is implemented")


# -- finite differences -------------------------------------------------------

_FD_CACHE = {}


def fd_matrix(n, order, dx):
    """Dense (n, n) derivative matrix: central rows inside, one-sided edges.

    Second-order accurate at every row; exact for polynomials up to degree 2
    (the order-2 edge rows are exact for cubics as well).
    """
    if order not in (1, 2):
        raise ValueError("invalid-input: derivative order must be 1 or 2")
    if n < 4:
        raise ValueError("invalid-grid: need at least 4 points along a differenced axis")
    if dx <= 0:
        raise ValueError("invalid-input: dx must be positive")
    key = (int(n), int(order), float(dx))
    mat = _FD_CACHE.get(key)
    if mat is None:
        ones = np.ones(n - 1)
        if order == 1:
            mat = (np.diag(ones, 1) - np.diag(ones, -1)) / 2.0
            mat[0, :3] = (-1.5, 2.0, -0.5)
            mat[-1, -3:] = (0.5, -2.0, 1.5)
            mat /= dx
        else:
            mat = np.diag(ones, 1) + np.diag(ones, -1) - 2.0 * np.eye(n)
            mat[0, :4] = (2.0, -5.0, 4.0, -1.0)
            mat[-1, -4:] = (-1.0, 4.0, -5.0, 2.0)
            mat /= dx * dx
        mat.setflags(write=False)
        _FD_CACHE[key] = mat
    return mat


def _apply_along(values, mat, axis):
    moved = np.moveaxis(values, axis, -1)
    return np.moveaxis(moved @ mat.T, -1, axis)


def fd_derivative(field, order, axis, dx):
    """Finite-difference derivative of the given order along one axis."""
    if isinstance(field, ad.Tensor):
        return ad.matrix_apply(field, fd_matrix(field.value.shape[axis], order, dx), axis)
    values = np.asarray(field, dtype=np.float64)
    return _apply_along(values, fd_matrix(values.shape[axis], order, dx), axis)


# -- spectral derivatives -----------------------------------------------------

_SYMBOL_CACHE = {}


def laplacian_symbol(ny, nx, domain_length):
    """Fourier symbol of the periodic Laplacian, -(kx^2 + ky^2), laid out for
    a half-spectrum transform over the two trailing axes of a (ny, nx) grid."""
    if domain_length <= 0:
        raise ValueError("invalid-input: domain_length must be positive")
    key = (int(ny), int(nx), float(domain_length))
    sym = _SYMBOL_CACHE.get(key)
    if sym is None:
        ky = 2.0 * np.pi * np.fft.fftfreq(ny, d=domain_length / ny)
        kx = 2.0 * np.pi * np.fft.rfftfreq(nx, d=domain_length / nx)
        sym = -(ky[:, None] ** 2 + kx[None, :] ** 2)
        sym.setflags(write=False)
        _SYMBOL_CACHE[key] = sym
    return sym


def spectral_derivative(field, order, axis, domain_length):
    """Periodic derivative: multiply the half spectrum by (i k)^order.

    For odd orders on an even-length axis the unpaired highest mode is
    zeroed, as its sine companion is not representable on the grid.
    """
    if not isinstance(order, int) or order < 1:
        raise ValueError("invalid-input: order must be a positive integer")
    if domain_length <= 0:
        raise ValueError("invalid-input: domain_length must be positive")
    values = field.value if isinstance(field, ad.Tensor) else np.asarray(field)
    ax = axis % values.ndim
    n = values.shape[ax]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=domain_length / n)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[-1] = 0.0
    if order % 2 == 0:
        mult = mult.real
    shape = [1] * values.ndim
    shape[ax] = mult.size
    mult = mult.reshape(shape)
    if isinstance(field, ad.Tensor):
        spec = ad.fft_forward(field, axes=(ax,))
        return ad.fft_inverse(ad.const_mul(spec, mult), (n,), axes=(ax,))
    return np.fft.irfft(np.fft.rfft(values, axis=ax) * mult, n=n, axis=ax)


def spectral_laplacian(field, domain_length):
    """Periodic Laplacian over the two trailing axes in one transform pass.

    Identical to summing order-2 spectral derivatives along each axis.
    """
    if isinstance(field, ad.Tensor):
        ny, nx = field.value.shape[-2:]
        sym = laplacian_symbol(ny, nx, domain_length)
        sym = sym.reshape((1,) * (field.value.ndim - 2) + sym.shape)
        spec = ad.fft_forward(field, axes=(-2, -1))
        return ad.fft_inverse(ad.const_mul(spec, sym), (ny, nx), axes=(-2, -1))
    values = np.asarray(field, dtype=np.float64)
    ny, nx = values.shape[-2:]
    sym = laplacian_symbol(ny, nx, domain_length)
    spec = np.fft.rfftn(values, axes=(-2, -1)) * sym
    return np.fft.irfftn(spec, s=(ny, nx), axes=(-2, -1))


# -- shared shape plumbing ----------------------------------------------------


def _values(field):
    return field.value if isinstance(field, ad.Tensor) else np.asarray(field)


def _common_shape(*fields):
    shapes = {tuple(_values(f).shape) for f in fields}
    if len(shapes) != 1:
        raise ValueError(f"invalid-shape: residual fields disagree: {sorted(shapes)}")
    return shapes.pop()


def _spatial_ndim(shape):
    # bare grids are (nx,) or (ny, nx); batched grids carry a (batch, channel)
    # prefix, so rank 3 means batched 1d and rank 4 batched 2d
    if len(shape) in (1, 3):
        return 1
    if len(shape) in (2, 4):
        return 2
    raise ValueError(f"invalid-shape: cannot infer grid layout from rank-{len(shape)} field")


def _fd_laplacian(field, sdim, dx):
    out = fd_derivative(field, 2, -1, dx)
    if sdim == 2:
        out = out + fd_derivative(field, 2, -2, dx)
    return out


# -- corrosion ----------------------------------------------------------------


def residual_corrosion(phi_n, c_n, phi_next, c_next, p, dt, dx):
    """Residuals of the coupled dissolution system, next step implicit.

    Returns (r_phase, r_transport). The interpolation h(phi) = 3 phi^2 - 2 phi^3
    carries the solid/liquid concentration split; its Laplacian is taken on the
    composed field h(phi) directly. Works for 1d and 2d grids.
    """
    if dt <= 0:
        raise ValueError("invalid-input: dt must be positive")
    sdim = _spatial_ndim(_common_shape(phi_n, c_n, phi_next, c_next))

    phi = phi_next
    phi2 = phi * phi
    phi3 = phi2 * phi
    h = phi2 * 3.0 - phi3 * 2.0
    hp = phi * 6.0 - phi2 * 6.0                  # h'(phi)
    gp = phi * 2.0 - phi2 * 6.0 + phi3 * 4.0     # g'(phi), g the double well
    dc_eq = p.c_se - p.c_le
    two_am = 2.0 * p.free_energy * p.diffusivity

    r_transport = ((c_next - c_n) * (1.0 / dt)
                   - _fd_laplacian(c_next, sdim, dx) * two_am
                   + _fd_laplacian(h, sdim, dx) * (two_am * dc_eq))

    bracket = c_next - h * dc_eq - p.c_le        # deviation from local equilibrium
    r_phase = ((phi - phi_n) * (1.0 / dt)
               - (bracket * hp) * (2.0 * p.free_energy * p.kinetics * dc_eq)
               + gp * (p.kinetics * p.barrier)
               - _fd_laplacian(phi, sdim, dx) * (p.kinetics * p.grad_coeff))
    return r_phase, r_transport


# -- solidification -----------------------------------------------------------


def anisotropy(grad_phi, aniso_strength, aniso_mode):
    """Four-fold interface energy factor kappa and its torque vector H.

    grad_phi is the (phi_x, phi_y) pair. Both outputs are rational polynomials
    in the gradient components (no angles), so they stay differentiable on the
    tape: cos(4 theta) = (gx^4 - 6 gx^2 gy^2 + gy^4) / |g|^4. Points with
    |grad phi| < GRAD_FLOOR fall back to kappa = 1, H = 0.
    """
    if aniso_mode != 4:
        raise ValueError("unsupported-mode: only four-fold anisotropy is implemented")
    if len(grad_phi) != 2:
        raise ValueError("invalid-input: anisotropy expects a 2d gradient pair")
    gx, gy = grad_phi
    vx, vy = _values(gx), _values(gy)
    if vx.shape != vy.shape:
        raise ValueError("invalid-shape: gradient components disagree")
    mask = ((vx * vx + vy * vy) >= GRAD_FLOOR ** 2).astype(np.float64)

    gx2 = gx * gx
    gy2 = gy * gy
    g2 = gx2 + gy2 + (1.0 - mask)     # masked points get a harmless denominator
    cos4_num = gx2 * gx2 - (gx2 * gy2) * 6.0 + gy2 * gy2
    kappa = (cos4_num / (g2 * g2)) * (mask * aniso_strength) + 1.0

    den6 = g2 * (g2 * g2)             # |grad phi|^6
    scale = mask * (16.0 * aniso_strength)
    h_x = (((gx * gy2) * (gx2 - gy2)) / den6) * scale
    h_y = (((gy * gx2) * (gy2 - gx2)) / den6) * scale
    return kappa, (h_x, h_y)


def residual_solidification(phi_n, t_n, phi_next, t_next, p, dt, dx):
    """Residuals of the anisotropic crystal growth system, next step implicit.

    Returns (r_phase, r_heat). The divergence of the anisotropic flux is
    expanded into kappa^2 * lap(phi) plus derivative products so that every
    spatial operator is a plain stencil application on a nodal field.
    """
    if dt <= 0:
        raise ValueError("invalid-input: dt must be positive")
    if _spatial_ndim(_common_shape(phi_n, t_n, phi_next, t_next)) != 2:
        raise ValueError("invalid-shape: crystal growth fields are 2d grids")

    def d1(f, ax):
        return fd_derivative(f, 1, ax, dx)

    phi = phi_next
    gx = d1(phi, -1)
    gy = d1(phi, -2)
    kappa, (h_x, h_y) = anisotropy((gx, gy), p.aniso_strength, p.aniso_mode)
    k2 = kappa * kappa
    g2 = gx * gx + gy * gy
    lap_phi = _fd_laplacian(phi, 2, dx)
    div_flux = (k2 * lap_phi + d1(k2, -1) * gx + d1(k2, -2) * gy
                + d1((kappa * g2) * h_x, -1) + d1((kappa * g2) * h_y, -2))

    phi2 = phi * phi
    one_m = 1.0 - phi2
    hp = one_m * one_m                            # h'(phi) for the quintic h
    f_prime = phi2 * phi - phi                    # derivative of the double well
    dphi_dt = (phi - phi_n) * (1.0 / dt)

    r_phase = (dphi_dt * p.mobility - div_flux + f_prime * (1.0 / p.width ** 2)
               + (hp * t_next) * (p.kinetic / p.width))
    r_heat = ((t_next - t_n) * (1.0 / dt)
              - _fd_laplacian(t_next, 2, dx) * p.diffusivity
              - (hp * dphi_dt) * p.latent)
    return r_phase, r_heat


# -- spinodal decomposition ---------------------------------------------------


def residual_spinodal(c_n, c_next, p, dt, domain_length):
    """Residual of the conserved phase-separation equation, next step implicit.

    mu = c^3 - c - grad_coeff * lap(c) with periodic spectral Laplacians;
    the residual mean equals mean(c_next - c_n) / dt to rounding because the
    Laplacian kills the k = 0 mode.
    """
    if dt <= 0:
        raise ValueError("invalid-input: dt must be positive")
    if _spatial_ndim(_common_shape(c_n, c_next)) != 2:
        raise ValueError("invalid-shape: phase-separation fields are 2d grids")
    c = c_next
    mu = (c * c) * c - c - spectral_laplacian(c, domain_length) * p.grad_coeff
    return (c - c_n) * (1.0 / dt) - spectral_laplacian(mu, domain_length) * p.mobility
