"""Builders for the concrete factor spaces and local operators: truncated
Fock ladders, position/momentum grids in real and imaginary flavor, and
time grids with spectral energy operators.

Grids are uniform and symmetric about 0 with spacing ``2*extent/n_points``;
imaginary-flavor grids are parametrized by a real coordinate u with
r_im = i*u, and every imaginary-flavor matrix is derived from the real one
by an explicit i-multiplication rule stated in its builder.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .core import DENSE_CAP, CapacityError, FactorSpace, LocalOperator, StructureError

#: Fock builders attach the exact symbolic sidecar only up to this dimension;
#: symbolic products on larger truncations are not worth their cost.
EXACT_FOCK_MAX = 64


@dataclass(frozen=True)
class GridSpec:
    """Uniform symmetric grid: n_points points, half-width ``extent``.

    Points are ``spacing * (j - (n_points-1)/2)`` for j = 0..n_points-1 with
    ``spacing = 2*extent/n_points``, i.e. symmetric about 0; for periodic
    grids the period is ``2*extent``.  ``periodic`` selects the
    differentiation scheme (Fourier-spectral vs central differences).
    """

    n_points: int
    extent: float
    periodic: bool = True

    def __post_init__(self):
        if self.n_points < 2:
            raise StructureError(f"a grid needs at least 2 points, got {self.n_points}")
        if not self.extent > 0:
            raise StructureError(f"grid extent must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.n_points

    @property
    def period(self) -> float:
        return 2.0 * self.extent

    def points(self) -> np.ndarray:
        n = self.n_points
        return self.spacing * (np.arange(n) - (n - 1) / 2.0)


@dataclass(frozen=True)
class GlobalConstants:
    """hbar, the real-sector light speed c, and the field mass.

    The imaginary-sector light speed is never stored: it enters only through
    its square, c_im**2 = -c**2.
    """

    hbar: float = 1.0
    c: float = 1.0
    mass: float = 0.0

    def __post_init__(self):
        if not self.hbar > 0:
            raise StructureError(f"hbar must be positive, got {self.hbar}")
        if not self.c > 0:
            raise StructureError(f"c must be positive, got {self.c}")
        if self.mass < 0:
            raise StructureError(f"mass must be nonnegative, got {self.mass}")


class FockOps(NamedTuple):
    space: FactorSpace
    a: LocalOperator
    adag: LocalOperator
    num: LocalOperator
    q: LocalOperator
    p: LocalOperator


def _ladder_matrices(dim: int):
    v = np.sqrt(np.arange(1, dim, dtype=float))
    a = sp.diags(v, offsets=1, shape=(dim, dim), dtype=complex, format="csr")
    adag = sp.diags(v, offsets=-1, shape=(dim, dim), dtype=complex, format="csr")
    return a, adag


def _exact_ladder(dim: int, hbar: float):
    """Symbolic mirrors of a, a†, n, q, p so ladder products stay rational."""
    import sympy

    h2 = sympy.Rational(Fraction(hbar)) / 2
    a = sympy.zeros(dim, dim)
    for n in range(1, dim):
        a[n - 1, n] = sympy.sqrt(n)
    a = sympy.ImmutableSparseMatrix(a)
    adag = a.H
    num = adag @ a
    q = sympy.sqrt(h2) * (a + adag)
    p = (a - adag) * sympy.sqrt(h2) / sympy.I
    return a, adag, num, q, p


def make_fock(dim: int, label: str, constants: GlobalConstants | None = None) -> FockOps:
    """Truncated Fock factor with ladder, number and quadrature operators.

    a|n> = sqrt(n)|n-1>, adag|n> = sqrt(n+1)|n+1> truncated at dim-1,
    n = adag a = diag(0..dim-1), q = (a+adag)*sqrt(hbar/2),
    p = (a-adag)*sqrt(hbar/2)/i.
    """
    if dim < 2:
        raise StructureError(f"a Fock truncation needs dim >= 2, got {dim}")
    hbar = (constants or GlobalConstants()).hbar
    space = FactorSpace(label, "fock", dim, "real", np.arange(dim, dtype=float))
    a_m, adag_m = _ladder_matrices(dim)
    s = np.sqrt(hbar / 2.0)
    num_m = sp.diags(np.arange(dim, dtype=float), dtype=complex, format="csr")
    q_m = s * (a_m + adag_m)
    p_m = (a_m - adag_m) * (s / 1j)
    if dim <= EXACT_FOCK_MAX and float(Fraction(hbar)) == hbar:
        a_e, adag_e, num_e, q_e, p_e = _exact_ladder(dim, hbar)
    else:
        a_e = adag_e = num_e = q_e = p_e = None
    return FockOps(
        space=space,
        a=LocalOperator(label, a_m, exact=a_e),
        adag=LocalOperator(label, adag_m, exact=adag_e),
        num=LocalOperator(label, num_m, frozenset({"hermitian", "diagonal"}), num_e),
        q=LocalOperator(label, q_m, frozenset({"hermitian"}), q_e),
        p=LocalOperator(label, p_m, frozenset({"hermitian"}), p_e),
    )


def number_dyad(space: FactorSpace, index: int) -> LocalOperator:
    """Rank-1 projector |index><index| on any factor."""
    if not 0 <= index < space.dim:
        raise StructureError(f"dyad index {index} out of range for {space.label!r} (dim {space.dim})")
    m = sp.csr_matrix(([1.0 + 0.0j], ([index], [index])), shape=(space.dim, space.dim))
    return LocalOperator(space.label, m, frozenset({"hermitian", "diagonal"}))


def _diff_matrix(spec: GridSpec) -> np.ndarray:
    """Differentiation matrix on the grid's real parameter.

    Periodic grids get the Fourier-spectral matrix (exact on resolvable
    plane waves); non-periodic grids get plain central differences.  The
    lower triangle mirrors the upper with a sign, so antisymmetry is exact.
    """
    n = spec.n_points
    d = np.zeros((n, n))
    if spec.periodic:
        scale = 2.0 * np.pi / spec.period
        h = 2.0 * np.pi / n
        for j in range(n):
            for k in range(j):
                m = j - k
                if n % 2:
                    val = ((-1.0) ** m) / (2.0 * np.sin(m * h / 2.0))
                else:
                    val = ((-1.0) ** m) / (2.0 * np.tan(m * h / 2.0))
                d[j, k] = scale * val
                d[k, j] = -scale * val
    else:
        inv2 = 1.0 / (2.0 * spec.spacing)
        for j in range(n - 1):
            d[j, j + 1] = inv2
            d[j + 1, j] = -inv2
    return d


def make_position_grid(spec: GridSpec, flavor: str, label: str) -> tuple[FactorSpace, LocalOperator]:
    """Position-grid factor with its diagonal coordinate operator.

    Real flavor: basis values are the grid points, r = diag(points),
    Hermitian.  Imaginary flavor: basis values are i*(grid points),
    r = diag(i*points), anti-Hermitian with purely imaginary eigenvalues.
    """
    u = spec.points()
    if flavor == "real":
        values = u.astype(complex)
        flags = frozenset({"hermitian", "diagonal"})
    elif flavor == "imaginary":
        values = 1j * u
        flags = frozenset({"anti_hermitian", "diagonal"})
    else:
        raise StructureError(f"unknown flavor {flavor!r}")
    space = FactorSpace(label, "grid", spec.n_points, flavor, values, grid=spec)
    r = LocalOperator(label, sp.diags(values, dtype=complex, format="csr"), flags)
    return space, r


def make_momentum_operator(space: FactorSpace, constants: GlobalConstants | None = None) -> LocalOperator:
    """Momentum operator conjugate to a position-grid factor.

    Real flavor: k = -i*hbar*D, Hermitian (D is the real antisymmetric
    differentiation matrix).  Imaginary flavor: with r_im = i*u the chain
    rule gives k_im = -i*hbar*(1/i)*D_u = -hbar*D_u, a real antisymmetric
    matrix, hence anti-Hermitian with purely imaginary eigenvalues.
    """
    if space.kind != "grid" or space.grid is None:
        raise StructureError(f"factor {space.label!r} was not built as a position grid")
    hbar = (constants or GlobalConstants()).hbar
    d = _diff_matrix(space.grid)
    if space.flavor == "real":
        return LocalOperator(space.label, sp.csr_matrix(-1j * hbar * d), frozenset({"hermitian"}))
    return LocalOperator(space.label, sp.csr_matrix((-hbar * d).astype(complex)), frozenset({"anti_hermitian"}))


class TimeEnergyOps(NamedTuple):
    t_space: FactorSpace
    t_op: LocalOperator
    s_op: LocalOperator
    e_space: FactorSpace
    e_diag: LocalOperator


def resolvable_energies(spec: GridSpec, constants: GlobalConstants | None = None) -> np.ndarray:
    """Energies whose phase factors are exact harmonics of the time grid.

    These are hbar * 2*pi*m / period for integer m, returned ascending and
    symmetric about 0 (for even n the topmost positive harmonic is dropped
    rather than the Nyquist mode being double-counted).
    """
    hbar = (constants or GlobalConstants()).hbar
    n = spec.n_points
    m = np.arange(-(n // 2), (n + 1) // 2)
    return hbar * 2.0 * np.pi * m / spec.period


def make_time_energy(
    spec: GridSpec,
    labels: tuple[str, str],
    constants: GlobalConstants | None = None,
) -> TimeEnergyOps:
    """Time-grid factor with t = diag(grid) and s = +i*hbar*D_t, plus a
    separate energy factor carrying the grid's resolvable energies with
    s_diag = diag(energies).

    Note the sign: the energy operator in time representation is
    +i*hbar*d/dt, whose eigenvector for energy E is exp(E*t/(i*hbar)).
    """
    t_label, e_label = labels
    hbar = (constants or GlobalConstants()).hbar
    t_space, t_op = make_position_grid(spec, "real", t_label)
    d = _diff_matrix(spec)
    s_op = LocalOperator(t_label, sp.csr_matrix(1j * hbar * d), frozenset({"hermitian"}))
    energies = resolvable_energies(spec, constants)
    e_space = FactorSpace(e_label, "grid", len(energies), "real", energies.astype(complex))
    e_diag = LocalOperator(e_label, sp.diags(energies.astype(complex), format="csr"),
                           frozenset({"hermitian", "diagonal"}))
    return TimeEnergyOps(t_space, t_op, s_op, e_space, e_diag)


class SpectrumBounds(NamedTuple):
    min_real: float
    max_real: float
    max_abs_imag: float


#: Largest dimension spectrum_bounds will diagonalize densely.
SPECTRUM_DIM_CAP = 2048


def spectrum_bounds(op: LocalOperator, *, dim_cap: int = SPECTRUM_DIM_CAP) -> SpectrumBounds:
    """Eigenvalue summary (min real, max real, max |imag|) of a local operator.

    Matrices that are Hermitian within 1e-12 go through the symmetric
    eigensolver; everything else through the general one, so claimed
    structure (e.g. purely imaginary spectra) is measured, not assumed.
    """
    if op.dim > dim_cap:
        raise CapacityError(f"spectrum_bounds is capped at dim {dim_cap}, got {op.dim}")
    m = op.dense()
    if np.abs(m - m.conj().T).max() <= 1e-12:
        ev = np.linalg.eigvalsh(m).astype(complex)
    else:
        ev = np.linalg.eigvals(m)
    return SpectrumBounds(
        min_real=float(ev.real.min()),
        max_real=float(ev.real.max()),
        max_abs_imag=float(np.abs(ev.imag).max()),
    )
