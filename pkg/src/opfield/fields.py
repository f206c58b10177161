"""Mode tables with dispersion-assigned energies, the diagonal field
operator over amplitude and dyadic factors, the mode Hamiltonian, the
energy-sum operator, and field states.

Each mode pairs a real momentum point with an imaginary one (stored as the
real 3-vector kappa with k_im = i*kappa).  The two dispersion branches are

    E_re = +sqrt(|k_re|^2 c^2 + m^2 c^4)
    E_im = -sqrt(|kappa|^2 c^2 + m^2 c^4)

the second following from c_im^2 = -c^2: k_im^2 c_im^2 = |kappa|^2 c^2, so
the branch is real and taken negative.  Under conjugate pairing
(kappa = k_re pointwise) the two branches cancel mode by mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .core import (
    FactorSpace,
    FieldState,
    LocalOperator,
    OperatorExpr,
    ProductSpace,
    StructureError,
    compose,
    op_norm_residual,
    residual_path,
)
from .reports import CheckReport, make_report
from .spaces import GlobalConstants, make_fock, number_dyad

#: Tolerance for deduplicating momentum vectors and energies into factor bases.
DEDUP_TOL = 1e-12


def _as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise StructureError(f"momentum points must be 3-vectors, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ModePoint:
    """One field mode: real momentum, imaginary momentum (as kappa), and
    their dispersion-assigned energies."""

    k_re: np.ndarray
    kappa: np.ndarray
    e_re: float
    e_im: float

    def __post_init__(self):
        object.__setattr__(self, "k_re", _as_vec3(self.k_re))
        object.__setattr__(self, "kappa", _as_vec3(self.kappa))


@dataclass(frozen=True)
class ModeTable:
    """Modes plus the discretized measure weight per mode."""

    modes: tuple[ModePoint, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.modes) != len(self.weights):
            raise StructureError("one weight per mode required")
        if not self.modes:
            raise StructureError("a mode table needs at least one mode")
        if any(w <= 0 for w in self.weights):
            raise StructureError("mode weights must be positive")
        seen = set()
        for m in self.modes:
            key = (tuple(m.k_re), tuple(m.kappa))
            if key in seen:
                raise StructureError(f"duplicate mode point {key}")
            seen.add(key)

    def __len__(self):
        return len(self.modes)


def dispersion_energy(k: np.ndarray, constants: GlobalConstants) -> float:
    c = constants.c
    return float(np.sqrt(float(np.dot(k, k)) * c * c + constants.mass**2 * c**4))


def build_mode_table(
    k_re_points: Sequence,
    kappa_points: Sequence | None,
    constants: GlobalConstants,
    pairing: str = "independent",
    weights: Sequence[float] | None = None,
) -> ModeTable:
    """Assign dispersion energies to momentum points.

    ``pairing="conjugate"`` takes kappa = k_re pointwise (pass
    ``kappa_points=None`` or an identical list), which makes E_re + E_im
    vanish for every mode.  ``pairing="independent"`` zips the two lists.
    """
    k_res = [_as_vec3(k) for k in k_re_points]
    if not k_res:
        raise StructureError("need at least one real momentum point")
    if pairing == "conjugate":
        if kappa_points is not None:
            kappas = [_as_vec3(k) for k in kappa_points]
            if len(kappas) != len(k_res) or any(
                not np.array_equal(a, b) for a, b in zip(k_res, kappas)
            ):
                raise StructureError("conjugate pairing requires kappa points identical to k_re points")
        kappas = [k.copy() for k in k_res]
    elif pairing == "independent":
        if kappa_points is None:
            raise StructureError("independent pairing requires explicit kappa points")
        kappas = [_as_vec3(k) for k in kappa_points]
        if len(kappas) != len(k_res):
            raise StructureError(
                f"point lists must have equal length, got {len(k_res)} and {len(kappas)}"
            )
    else:
        raise StructureError(f"unknown pairing {pairing!r}")
    modes = []
    for k, kap in zip(k_res, kappas):
        modes.append(
            ModePoint(k, kap, dispersion_energy(k, constants), -dispersion_energy(kap, constants))
        )
    if weights is None:
        weights = [1.0] * len(modes)
    return ModeTable(tuple(modes), tuple(weights))


def validate_mode_table(table: ModeTable, constants: GlobalConstants, tol: float = 1e-12) -> None:
    """Check every mode's energies against the dispersion branches."""
    for i, m in enumerate(table.modes):
        if abs(m.e_re - dispersion_energy(m.k_re, constants)) > tol:
            raise StructureError(f"mode {i}: E_re violates the positive dispersion branch")
        if abs(m.e_im + dispersion_energy(m.kappa, constants)) > tol:
            raise StructureError(f"mode {i}: E_im violates the negative dispersion branch")


def _dedup_vectors(vectors: list[np.ndarray]) -> tuple[list[np.ndarray], list[int]]:
    reps: list[np.ndarray] = []
    idx = []
    for v in vectors:
        for j, r in enumerate(reps):
            if np.abs(v - r).max() <= DEDUP_TOL:
                idx.append(j)
                break
        else:
            idx.append(len(reps))
            reps.append(v)
    return reps, idx


def _dedup_scalars(values: list[float]) -> tuple[list[float], list[int]]:
    reps: list[float] = []
    idx = []
    for v in values:
        for j, r in enumerate(reps):
            if abs(v - r) <= DEDUP_TOL:
                idx.append(j)
                break
        else:
            idx.append(len(reps))
            reps.append(v)
    return reps, idx


def _vector_basis_values(vectors: list[np.ndarray]) -> np.ndarray:
    # Collinear-along-x tables keep the physical scalar as the basis label;
    # anything else falls back to the enumeration index.  Numerics never read
    # these labels (component values come from the descriptor arrays).
    if all(v[1] == 0.0 and v[2] == 0.0 for v in vectors):
        return np.array([v[0] for v in vectors], dtype=complex)
    return np.arange(len(vectors), dtype=float).astype(complex)


@dataclass(frozen=True)
class FieldDescriptor:
    """A field's product space plus the mode data resolved to basis indices.

    The space is [amplitude factors] x k_re x e_re x k_im x e_im; the
    dyadic factors are shared by all components, each component owning one
    amplitude factor.  ``mode_indices[m]`` gives (ik, ie_re, ikap, ie_im)
    for mode m; ``k_re_vectors`` / ``kappa_vectors`` hold the deduplicated
    momentum 3-vectors per basis index and ``e_re_values`` / ``e_im_values``
    the deduplicated energies (which are the energy factors' basis values).
    """

    space: ProductSpace
    table: ModeTable
    constants: GlobalConstants
    n_components: int
    fock: tuple  # FockOps per component
    k_re_vectors: tuple
    kappa_vectors: tuple
    e_re_values: tuple
    e_im_values: tuple
    mode_indices: tuple

    @property
    def amplitude_labels(self) -> tuple[str, ...]:
        return tuple(f.space.label for f in self.fock)

    def dyadic_factor(self, name: str) -> FactorSpace:
        return self.space.factor(name)


def build_descriptor(
    table: ModeTable,
    constants: GlobalConstants,
    n_components: int = 1,
    fock_dims: int | Sequence[int] = 2,
    amplitude_labels: Sequence[str] | None = None,
) -> FieldDescriptor:
    """Assemble the product space for a field and resolve each mode to its
    basis indices in the dyadic factors."""
    if n_components < 1:
        raise StructureError(f"n_components must be positive, got {n_components}")
    if isinstance(fock_dims, int):
        fock_dims = [fock_dims] * n_components
    fock_dims = list(fock_dims)
    if len(fock_dims) != n_components:
        raise StructureError("one Fock dimension per component required")
    if amplitude_labels is None:
        amplitude_labels = (
            ["amp"] if n_components == 1 else [f"amp{i}" for i in range(n_components)]
        )
    if len(amplitude_labels) != n_components:
        raise StructureError("one amplitude label per component required")
    fock = tuple(make_fock(d, lbl, constants) for d, lbl in zip(fock_dims, amplitude_labels))

    k_reps, k_idx = _dedup_vectors([m.k_re for m in table.modes])
    kap_reps, kap_idx = _dedup_vectors([m.kappa for m in table.modes])
    ere_reps, ere_idx = _dedup_scalars([m.e_re for m in table.modes])
    eim_reps, eim_idx = _dedup_scalars([m.e_im for m in table.modes])

    k_space = FactorSpace("k_re", "grid", len(k_reps), "real", _vector_basis_values(k_reps))
    ere_space = FactorSpace("e_re", "grid", len(ere_reps), "real", np.array(ere_reps, dtype=complex))
    kim_space = FactorSpace("k_im", "grid", len(kap_reps), "imaginary", 1j * _vector_basis_values(kap_reps))
    eim_space = FactorSpace("e_im", "grid", len(eim_reps), "real", np.array(eim_reps, dtype=complex))

    space = ProductSpace([f.space for f in fock] + [k_space, ere_space, kim_space, eim_space])
    mode_indices = tuple(zip(k_idx, ere_idx, kap_idx, eim_idx))
    return FieldDescriptor(
        space=space,
        table=table,
        constants=constants,
        n_components=n_components,
        fock=fock,
        k_re_vectors=tuple(k_reps),
        kappa_vectors=tuple(kap_reps),
        e_re_values=tuple(ere_reps),
        e_im_values=tuple(eim_reps),
        mode_indices=mode_indices,
    )


def _mode_dyads(desc: FieldDescriptor, mode: int) -> dict[str, LocalOperator]:
    ik, ie_re, ikap, ie_im = desc.mode_indices[mode]
    return {
        "k_re": number_dyad(desc.space.factor("k_re"), ik),
        "e_re": number_dyad(desc.space.factor("e_re"), ie_re),
        "k_im": number_dyad(desc.space.factor("k_im"), ikap),
        "e_im": number_dyad(desc.space.factor("e_im"), ie_im),
    }


def build_field_operator(desc: FieldDescriptor, component: int = 0) -> OperatorExpr:
    """The field as an operator: one term per mode, the component's number
    operator tensored with that mode's four dyads, weighted by the mode's
    measure weight.  Diagonal in the product basis and Hermitian."""
    if not 0 <= component < desc.n_components:
        raise StructureError(f"component {component} out of range ({desc.n_components} components)")
    amp = desc.fock[component]
    terms = []
    for m, w in enumerate(desc.table.weights):
        factors = {amp.space.label: amp.num}
        factors.update(_mode_dyads(desc, m))
        terms.append((w, factors))
    return OperatorExpr(desc.space, terms)


def _diag_local(space_factor: FactorSpace, values: np.ndarray) -> LocalOperator:
    flags = frozenset({"hermitian", "diagonal"}) if np.all(np.asarray(values).imag == 0) else frozenset({"diagonal"})
    return LocalOperator(space_factor.label, sp.diags(np.asarray(values, dtype=complex), format="csr"), flags)


def build_hamiltonian(desc: FieldDescriptor) -> OperatorExpr:
    """Mode Hamiltonian, diagonal on the momentum factors: eigenvalue
    +sqrt(k^2 c^2 + m^2 c^4) - sqrt(kappa^2 c^2 + m^2 c^4) at the joint
    basis point (k, i*kappa); identity elsewhere."""
    pos = np.array([dispersion_energy(k, desc.constants) for k in desc.k_re_vectors])
    neg = np.array([-dispersion_energy(k, desc.constants) for k in desc.kappa_vectors])
    return OperatorExpr(
        desc.space,
        [
            (1.0, {"k_re": _diag_local(desc.space.factor("k_re"), pos)}),
            (1.0, {"k_im": _diag_local(desc.space.factor("k_im"), neg)}),
        ],
    )


def build_s_operator(desc: FieldDescriptor) -> OperatorExpr:
    """Total energy operator: the sum of the two energy factors' diagonal
    basis values (both spectra are real); identity elsewhere."""
    ere = np.array(desc.e_re_values)
    eim = np.array(desc.e_im_values)
    return OperatorExpr(
        desc.space,
        [
            (1.0, {"e_re": _diag_local(desc.space.factor("e_re"), ere)}),
            (1.0, {"e_im": _diag_local(desc.space.factor("e_im"), eim)}),
        ],
    )


def check_dispersion(
    desc: FieldDescriptor,
    component: int = 0,
    tolerance: float = 1e-12,
    *,
    probes: int = 8,
    seed: int = 0,
) -> CheckReport:
    """Residual of H*phi = S*phi for this descriptor's field operator.

    For a consistently built descriptor every field term is supported on a
    single (k, E_re, kappa, E_im) basis point, so the residual vanishes by
    construction; the check guards the whole construction pipeline.  Above
    the dense cap a seeded probe estimate is used and recorded.
    """
    phi = build_field_operator(desc, component)
    h_phi = compose(build_hamiltonian(desc), phi)
    s_phi = compose(build_s_operator(desc), phi)
    path = residual_path(desc.space)
    kwargs = {"probes": probes, "seed": seed} if path == "probe" else {}
    residual = op_norm_residual(h_phi, s_phi, **kwargs)
    return make_report(
        "dispersion",
        {"dispersion_residual": residual},
        tolerance,
        details={"path": path, "n_modes": len(desc.table), "component": component},
    )


def perturb_e_re(desc: FieldDescriptor, mode: int, delta: float) -> FieldDescriptor:
    """Rebuild the descriptor with one mode's E_re shifted by delta.

    The result deliberately violates the dispersion branches; it exists for
    negative controls.
    """
    modes = list(desc.table.modes)
    m = modes[mode]
    modes[mode] = ModePoint(m.k_re, m.kappa, m.e_re + delta, m.e_im)
    table = ModeTable(tuple(modes), desc.table.weights)
    return build_descriptor(
        table,
        desc.constants,
        desc.n_components,
        [f.space.dim for f in desc.fock],
        list(desc.amplitude_labels),
    )


def build_field_state(
    desc: FieldDescriptor,
    occupations: Mapping[int, Sequence[int]],
    coefficients: Mapping[int, complex],
) -> FieldState:
    """Sum over modes of coeff * |n_0..n_{C-1}> x |k_re> x |E_re> x |k_im> x |E_im>.

    ``occupations[m]`` gives one occupation number per component for mode m;
    modes absent from ``coefficients`` are skipped.
    """
    terms = []
    for m in sorted(coefficients):
        if not 0 <= m < len(desc.table):
            raise StructureError(f"mode index {m} out of range ({len(desc.table)} modes)")
        occ = occupations.get(m, [0] * desc.n_components)
        occ = [int(n) for n in occ]
        if len(occ) != desc.n_components:
            raise StructureError(f"mode {m}: need one occupation per component")
        vecs = []
        for f, n in zip(desc.fock, occ):
            if not 0 <= n < f.space.dim:
                raise StructureError(
                    f"occupation {n} overflows the Fock truncation of {f.space.label!r} (dim {f.space.dim})"
                )
            v = np.zeros(f.space.dim, dtype=complex)
            v[n] = 1.0
            vecs.append(v)
        ik, ie_re, ikap, ie_im = desc.mode_indices[m]
        for name, idx in (("k_re", ik), ("e_re", ie_re), ("k_im", ikap), ("e_im", ie_im)):
            v = np.zeros(desc.space.factor(name).dim, dtype=complex)
            v[idx] = 1.0
            vecs.append(v)
        terms.append((complex(coefficients[m]), vecs))
    return FieldState(desc.space, terms=terms)
