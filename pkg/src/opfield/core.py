"""Ordered products of labeled factor spaces and the Kronecker-factored
operator algebra on them.

An operator is a sum of complex-weighted terms, each term a partial map from
factor labels to local matrices; labels absent from a term act as the
identity.  Nothing is materialized on the full product space unless its total
dimension is at or below ``DENSE_CAP``.  States are sums of product vectors
(one vector per factor) or explicit dense vectors over the product basis,
enumerated row-major in factor order.

All values are immutable after construction and every operation reduces in
canonical term order, so repeated runs on identical inputs are bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

#: Largest product dimension that dense conversions will materialize.
DENSE_CAP = 4096

#: Largest term list any single operation is allowed to produce.
TERM_CAP = 100_000

#: Tolerance used when verifying advisory structure flags.
FLAG_TOL = 1e-12

_KINDS = ("fock", "grid")
_FLAVORS = ("real", "imaginary")
_FLAGS = frozenset({"hermitian", "anti_hermitian", "diagonal", "unitary"})


class OpfieldError(Exception):
    """Base class for all library errors."""


class StructureError(OpfieldError):
    """Label or dimension mismatch, or an ill-formed domain value."""


class SpaceMismatchError(StructureError):
    """Two values that must share a product space do not."""


class CapacityError(OpfieldError):
    """A configured cap (dense dimension or term count) would be exceeded."""


def _as_complex_vector(values, n: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=complex)
    if arr.shape != (n,):
        raise StructureError(f"{what} must have exactly {n} entries, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FactorSpace:
    """One labeled, discretized factor of a product space.

    ``basis_values`` carry the physical labels of the basis: occupation
    numbers for ``fock`` factors, grid points for ``grid`` factors (purely
    real for flavor ``real``, purely imaginary for flavor ``imaginary``).
    ``grid`` optionally records the :class:`~opfield.spaces.GridSpec` the
    factor was built from; differentiation-matrix builders require it.
    """

    label: str
    kind: str
    dim: int
    flavor: str
    basis_values: np.ndarray
    grid: object | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise StructureError(f"unknown factor kind {self.kind!r}; expected one of {_KINDS}")
        if self.flavor not in _FLAVORS:
            raise StructureError(f"unknown flavor {self.flavor!r}; expected one of {_FLAVORS}")
        if self.dim < 1:
            raise StructureError(f"factor {self.label!r} needs dim >= 1, got {self.dim}")
        vals = _as_complex_vector(self.basis_values, self.dim, f"basis_values of {self.label!r}")
        object.__setattr__(self, "basis_values", vals)
        if self.flavor == "real" and np.any(vals.imag != 0.0):
            raise StructureError(f"factor {self.label!r} is real-flavored but has complex basis values")
        if self.flavor == "imaginary" and np.any(vals.real != 0.0):
            raise StructureError(f"factor {self.label!r} is imaginary-flavored but has non-imaginary basis values")


class ProductSpace:
    """Ordered product of factor spaces; order fixes the basis enumeration.

    The joint basis index is row-major over the factors in list order (the
    first factor varies slowest), matching the Kronecker-product convention
    of :func:`numpy.kron`.
    """

    __slots__ = ("factors", "dims", "total_dim", "_axis")

    def __init__(self, factors: Sequence[FactorSpace]):
        factors = tuple(factors)
        if not factors:
            raise StructureError("a ProductSpace needs at least one factor")
        labels = [f.label for f in factors]
        if len(set(labels)) != len(labels):
            raise StructureError(f"factor labels must be unique, got {labels}")
        self.factors = factors
        self.dims = tuple(f.dim for f in factors)
        self.total_dim = int(np.prod(self.dims, dtype=np.int64))
        self._axis = {f.label: i for i, f in enumerate(factors)}

    def axis(self, label: str) -> int:
        try:
            return self._axis[label]
        except KeyError:
            raise StructureError(f"no factor labeled {label!r} in this product space") from None

    def factor(self, label: str) -> FactorSpace:
        return self.factors[self.axis(label)]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.factors)

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, ProductSpace):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.dims == other.dims
            and all(
                a.kind == b.kind
                and a.flavor == b.flavor
                and np.array_equal(a.basis_values, b.basis_values)
                for a, b in zip(self.factors, other.factors)
            )
        )

    def __hash__(self):
        return hash((self.labels, self.dims))

    def __repr__(self):
        inner = " x ".join(f"{f.label}[{f.dim}]" for f in self.factors)
        return f"ProductSpace({inner}, total_dim={self.total_dim})"


def _check_same_space(a: ProductSpace, b: ProductSpace, what: str) -> None:
    if not (a is b or a == b):
        raise SpaceMismatchError(f"{what} must live on the same product space, got {a!r} and {b!r}")


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """A matrix acting in a single labeled factor.

    ``flags`` are advisory structure hints verified on demand by
    :meth:`verify_flags`.  ``exact`` optionally holds a symbolic (sympy)
    mirror of ``matrix``; when two local operators both carry one, their
    product is computed exactly and the float matrix is derived from it.
    This is what keeps truncated ladder identities exactly rational.
    """

    space_label: str
    matrix: sp.csr_matrix
    flags: frozenset = frozenset()
    exact: object | None = None

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        if m.shape[0] != m.shape[1]:
            raise StructureError(f"local operator on {self.space_label!r} must be square, got {m.shape}")
        m.eliminate_zeros()
        object.__setattr__(self, "matrix", m)
        unknown = set(self.flags) - _FLAGS
        if unknown:
            raise StructureError(f"unknown structure flags {sorted(unknown)}")
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def verify_flags(self, tol: float = FLAG_TOL) -> None:
        """Check every advisory flag against the matrix, raising on violation."""
        m = self.dense()
        if "hermitian" in self.flags and np.abs(m - m.conj().T).max() > tol:
            raise StructureError(f"{self.space_label!r}: hermitian flag violated")
        if "anti_hermitian" in self.flags and np.abs(m + m.conj().T).max() > tol:
            raise StructureError(f"{self.space_label!r}: anti_hermitian flag violated")
        if "diagonal" in self.flags and np.abs(m - np.diag(np.diag(m))).max() > tol:
            raise StructureError(f"{self.space_label!r}: diagonal flag violated")
        if "unitary" in self.flags and np.abs(m @ m.conj().T - np.eye(self.dim)).max() > tol:
            raise StructureError(f"{self.space_label!r}: unitary flag violated")


def _exact_to_csr(exact) -> sp.csr_matrix:
    rows = [[complex(e) for e in row] for row in exact.tolist()]
    return sp.csr_matrix(np.array(rows, dtype=complex))


def _local_adjoint(op: LocalOperator) -> LocalOperator:
    exact = op.exact.H if op.exact is not None else None
    return LocalOperator(op.space_label, op.matrix.conjugate().T.tocsr(), op.flags, exact)


def _local_matmul(a: LocalOperator, b: LocalOperator) -> LocalOperator:
    if a.space_label != b.space_label or a.dim != b.dim:
        raise StructureError(
            f"cannot multiply local operators on {a.space_label!r}/{b.space_label!r} "
            f"with dims {a.dim}/{b.dim}"
        )
    flags = set()
    if "diagonal" in a.flags and "diagonal" in b.flags:
        flags.add("diagonal")
    if "unitary" in a.flags and "unitary" in b.flags:
        flags.add("unitary")
    if a.exact is not None and b.exact is not None:
        exact = a.exact @ b.exact
        return LocalOperator(a.space_label, _exact_to_csr(exact), frozenset(flags), exact)
    m = (a.matrix @ b.matrix).tocsr()
    return LocalOperator(a.space_label, m, frozenset(flags))


def _canonical_term(space: ProductSpace, coeff, factors: Mapping[str, LocalOperator]):
    items = []
    for label, local in factors.items():
        axis = space.axis(label)
        if local.space_label != label:
            raise StructureError(f"local operator labeled {local.space_label!r} mapped under key {label!r}")
        if local.dim != space.dims[axis]:
            raise StructureError(
                f"local operator on {label!r} has dim {local.dim}, factor has dim {space.dims[axis]}"
            )
        items.append((axis, label, local))
    items.sort(key=lambda t: t[0])
    return complex(coeff), tuple((label, local) for _, label, local in items)


class OperatorExpr:
    """A sum of complex-weighted Kronecker-factored terms over a product space."""

    __slots__ = ("space", "terms")

    def __init__(self, space: ProductSpace, terms: Iterable[tuple[complex, Mapping[str, LocalOperator]]]):
        self.space = space
        self.terms = tuple(_canonical_term(space, c, f) for c, f in terms)

    @classmethod
    def identity(cls, space: ProductSpace, coeff: complex = 1.0) -> "OperatorExpr":
        return cls(space, [(coeff, {})])

    @classmethod
    def zero(cls, space: ProductSpace) -> "OperatorExpr":
        return cls(space, [])

    @classmethod
    def from_local(cls, space: ProductSpace, local: LocalOperator, coeff: complex = 1.0) -> "OperatorExpr":
        return cls(space, [(coeff, {local.space_label: local})])

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def __repr__(self):
        return f"OperatorExpr({self.n_terms} terms on {self.space!r})"


def _raw_expr(space: ProductSpace, raw_terms) -> OperatorExpr:
    """Build an OperatorExpr from already-canonical terms without revalidation."""
    out = OperatorExpr.__new__(OperatorExpr)
    out.space = space
    out.terms = tuple(raw_terms)
    return out


def op_scale(op: OperatorExpr, coeff: complex) -> OperatorExpr:
    c = complex(coeff)
    return _raw_expr(op.space, ((c * tc, tf) for tc, tf in op.terms))


def op_sum(*ops: OperatorExpr) -> OperatorExpr:
    """Concatenate term lists (left to right); all operands must share a space."""
    if not ops:
        raise StructureError("op_sum needs at least one operand")
    space = ops[0].space
    terms = []
    for op in ops:
        _check_same_space(space, op.space, "op_sum operands")
        terms.extend(op.terms)
    return _raw_expr(space, terms)


class FieldState:
    """A state over a product space: sum of product vectors, or dense vector."""

    __slots__ = ("space", "terms", "vector")

    def __init__(self, space: ProductSpace, *, terms=None, vector=None):
        if (terms is None) == (vector is None):
            raise StructureError("FieldState needs exactly one of terms / vector")
        self.space = space
        if terms is not None:
            canon = []
            for coeff, vecs in terms:
                vecs = tuple(vecs)
                if len(vecs) != len(space.factors):
                    raise StructureError(
                        f"product term has {len(vecs)} factor vectors, space has {len(space.factors)}"
                    )
                fixed = []
                for f, v in zip(space.factors, vecs):
                    fixed.append(_as_complex_vector(v, f.dim, f"state vector on {f.label!r}"))
                canon.append((complex(coeff), tuple(fixed)))
            self.terms = tuple(canon)
            self.vector = None
        else:
            vec = _as_complex_vector(vector, space.total_dim, "dense state vector")
            self.terms = None
            self.vector = vec

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_products(cls, space, terms) -> "FieldState":
        return cls(space, terms=terms)

    @classmethod
    def from_dense(cls, space, vector) -> "FieldState":
        return cls(space, vector=vector)

    @classmethod
    def zero(cls, space) -> "FieldState":
        return cls(space, terms=[])

    @classmethod
    def basis_state(cls, space: ProductSpace, indices: Mapping[str, int]) -> "FieldState":
        """Product basis state with the given index per labeled factor (default 0)."""
        vecs = []
        for f in space.factors:
            i = int(indices.get(f.label, 0))
            if not 0 <= i < f.dim:
                raise StructureError(f"basis index {i} out of range for factor {f.label!r} (dim {f.dim})")
            v = np.zeros(f.dim, dtype=complex)
            v[i] = 1.0
            vecs.append(v)
        return cls(space, terms=[(1.0, vecs)])

    # -- basics --------------------------------------------------------------

    @property
    def is_sop(self) -> bool:
        return self.terms is not None

    @property
    def n_terms(self) -> int:
        return len(self.terms) if self.terms is not None else 1

    def scale(self, coeff: complex) -> "FieldState":
        c = complex(coeff)
        if self.is_sop:
            return FieldState(self.space, terms=[(c * tc, tv) for tc, tv in self.terms])
        return FieldState(self.space, vector=c * self.vector)

    def add(self, other: "FieldState", term_cap: int | None = None) -> "FieldState":
        _check_same_space(self.space, other.space, "added states")
        if self.is_sop and other.is_sop:
            terms = self.terms + other.terms
            cap = TERM_CAP if term_cap is None else term_cap
            if len(terms) > cap:
                raise CapacityError(f"state sum would have {len(terms)} terms, exceeding the term cap of {cap}")
            return FieldState(self.space, terms=terms)
        return FieldState(self.space, vector=self.to_dense() + other.to_dense())

    def sub(self, other: "FieldState", term_cap: int | None = None) -> "FieldState":
        return self.add(other.scale(-1.0), term_cap=term_cap)

    def to_dense(self, dense_cap: int | None = None) -> np.ndarray:
        cap = DENSE_CAP if dense_cap is None else dense_cap
        if self.space.total_dim > cap:
            raise CapacityError(
                f"dense conversion of a {self.space.total_dim}-dimensional state exceeds the dense cap of {cap}"
            )
        if not self.is_sop:
            return self.vector.copy()
        out = np.zeros(self.space.total_dim, dtype=complex)
        for coeff, vecs in self.terms:
            prod = np.array([coeff], dtype=complex)
            for v in vecs:
                prod = np.kron(prod, v)
            out += prod
        return out

    def inner(self, other: "FieldState") -> complex:
        """Hermitian inner product <self|other>, conjugating ``self``."""
        _check_same_space(self.space, other.space, "inner-product states")
        if self.is_sop and other.is_sop:
            total = 0.0 + 0.0j
            for ci, vi in self.terms:
                for cj, vj in other.terms:
                    g = np.conj(ci) * cj
                    for a, b in zip(vi, vj):
                        g *= np.vdot(a, b)
                        if g == 0.0:
                            break
                    total += g
            return complex(total)
        if not self.is_sop and not other.is_sop:
            return complex(np.vdot(self.vector, other.vector))
        if self.is_sop:
            dims = self.space.dims
            total = 0.0 + 0.0j
            tensor = other.vector.reshape(dims)
            for ci, vi in self.terms:
                t = tensor
                for v in vi:
                    t = np.tensordot(np.conj(v), t, axes=([0], [0]))
                total += np.conj(ci) * complex(t)
            return complex(total)
        return complex(np.conj(other.inner(self)))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self).real, 0.0)))

    def __repr__(self):
        form = f"{len(self.terms)} product terms" if self.is_sop else "dense"
        return f"FieldState({form} on {self.space!r})"


# ---------------------------------------------------------------------------
# operator operations
# ---------------------------------------------------------------------------


def _apply_axis_dense(tensor: np.ndarray, axis: int, matrix: sp.csr_matrix) -> np.ndarray:
    moved = np.moveaxis(tensor, axis, 0)
    shape = moved.shape
    flat = moved.reshape(shape[0], -1)
    flat = matrix @ flat
    return np.moveaxis(flat.reshape(shape), 0, axis)


def apply(op: OperatorExpr, state: FieldState, *, term_cap: int | None = None, dense: bool = False) -> FieldState:
    """Apply an operator to a state.

    Sum-of-products input with T terms under an operator with K terms yields
    at most T*K product terms (exact zero terms are pruned); the result stays
    in sum-of-products form unless ``dense`` is requested.  Dense input stays
    dense.
    """
    _check_same_space(op.space, state.space, "apply operands")
    cap = TERM_CAP if term_cap is None else term_cap
    space = op.space
    if state.is_sop:
        out_terms = []
        for oc, ofac in op.terms:
            if oc == 0.0:
                continue
            for sc, svecs in state.terms:
                coeff = oc * sc
                if coeff == 0.0:
                    continue
                vecs = list(svecs)
                dead = False
                for label, local in ofac:
                    axis = space.axis(label)
                    v = local.matrix @ vecs[axis]
                    if not v.any():
                        dead = True
                        break
                    vecs[axis] = v
                if dead:
                    continue
                out_terms.append((coeff, tuple(vecs)))
                if len(out_terms) > cap:
                    raise CapacityError(
                        f"apply would produce more than the term cap of {cap} product terms"
                    )
        result = FieldState(space, terms=out_terms)
        if dense:
            return FieldState(space, vector=result.to_dense())
        return result
    tensor = state.vector.reshape(space.dims)
    out = np.zeros_like(tensor)
    for oc, ofac in op.terms:
        if oc == 0.0:
            continue
        t = tensor
        for label, local in ofac:
            t = _apply_axis_dense(t, space.axis(label), local.matrix)
        out = out + oc * t
    return FieldState(space, vector=out.reshape(-1))


def compose(a: OperatorExpr, b: OperatorExpr, *, term_cap: int | None = None) -> OperatorExpr:
    """Operator product a·b, term-wise, a-major then b (canonical order).

    Where both terms act in the same factor the local matrices multiply in
    a,b order; otherwise the present one is kept.  Terms that collapse to an
    exactly zero local matrix are pruned.
    """
    _check_same_space(a.space, b.space, "composed operators")
    cap = TERM_CAP if term_cap is None else term_cap
    space = a.space
    out = []
    for ac, afac in a.terms:
        amap = dict(afac)
        for bc, bfac in b.terms:
            coeff = ac * bc
            if coeff == 0.0:
                continue
            merged = dict(amap)
            dead = False
            for label, bl in bfac:
                if label in merged:
                    prod = _local_matmul(merged[label], bl)
                    if prod.matrix.nnz == 0:
                        dead = True
                        break
                    merged[label] = prod
                else:
                    merged[label] = bl
            if dead:
                continue
            out.append(_canonical_term(space, coeff, merged))
            if len(out) > cap:
                raise CapacityError(f"compose would produce more than the term cap of {cap} terms")
    return _raw_expr(space, out)


def adjoint(op: OperatorExpr) -> OperatorExpr:
    """Hermitian adjoint: conjugate coefficients, conjugate-transpose locals."""
    out = []
    for c, fac in op.terms:
        out.append((np.conj(c), tuple((label, _local_adjoint(l)) for label, l in fac)))
    return _raw_expr(op.space, out)


def commutator(a: OperatorExpr, b: OperatorExpr, *, term_cap: int | None = None) -> OperatorExpr:
    """compose(a, b) - compose(b, a), term lists concatenated in that order."""
    ab = compose(a, b, term_cap=term_cap)
    ba = compose(b, a, term_cap=term_cap)
    cap = TERM_CAP if term_cap is None else term_cap
    terms = ab.terms + tuple((-c, f) for c, f in ba.terms)
    if len(terms) > cap:
        raise CapacityError(f"commutator would produce more than the term cap of {cap} terms")
    return _raw_expr(a.space, terms)


def to_sparse_matrix(op: OperatorExpr, *, dense_cap: int | None = None) -> sp.csr_matrix:
    """Full product-space matrix (sparse); requires total_dim <= dense cap."""
    cap = DENSE_CAP if dense_cap is None else dense_cap
    n = op.space.total_dim
    if n > cap:
        raise CapacityError(f"materializing a {n}-dimensional operator exceeds the dense cap of {cap}")
    total = sp.csr_matrix((n, n), dtype=complex)
    for coeff, fac in op.terms:
        fmap = dict(fac)
        acc = None
        for f in op.space.factors:
            m = fmap[f.label].matrix if f.label in fmap else sp.identity(f.dim, dtype=complex, format="csr")
            acc = m if acc is None else sp.kron(acc, m, format="csr")
        total = total + coeff * acc
    total = sp.csr_matrix(total)
    total.eliminate_zeros()
    return total


def to_dense_matrix(op: OperatorExpr, *, dense_cap: int | None = None) -> np.ndarray:
    return to_sparse_matrix(op, dense_cap=dense_cap).toarray()


def random_product_state(space: ProductSpace, rng: np.random.Generator) -> FieldState:
    """Unit-norm random product state (each factor vector normalized)."""
    vecs = []
    for f in space.factors:
        v = rng.standard_normal(f.dim) + 1j * rng.standard_normal(f.dim)
        vecs.append(v / np.linalg.norm(v))
    return FieldState(space, terms=[(1.0, vecs)])


def op_norm_residual(
    a: OperatorExpr,
    b: OperatorExpr,
    *,
    dense_cap: int | None = None,
    probes: int | None = None,
    seed: int = 0,
) -> float:
    """How far two operators are from equal.

    Below the dense cap this is the max-entry norm of the difference of the
    full matrices.  Above it, ``probes`` random product states psi (seeded)
    are required and the result is max ||(a-b) psi|| / ||psi||.
    """
    _check_same_space(a.space, b.space, "compared operators")
    cap = DENSE_CAP if dense_cap is None else dense_cap
    if a.space.total_dim <= cap:
        diff = to_sparse_matrix(a, dense_cap=cap) - to_sparse_matrix(b, dense_cap=cap)
        diff = sp.csr_matrix(diff)
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0
    if probes is None:
        raise CapacityError(
            f"product dimension {a.space.total_dim} exceeds the dense cap of {cap}; "
            "supply a probe count for stochastic estimation"
        )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(int(probes)):
        psi = random_product_state(a.space, rng)
        r = apply(a, psi).sub(apply(b, psi)).norm()
        worst = max(worst, r / psi.norm())
    return worst


def residual_path(space: ProductSpace, *, dense_cap: int | None = None) -> str:
    """Which path :func:`op_norm_residual` takes on this space: dense or probe."""
    cap = DENSE_CAP if dense_cap is None else dense_cap
    return "dense" if space.total_dim <= cap else "probe"


def expectation(op: OperatorExpr, state: FieldState) -> complex:
    """Raw (unnormalized) expectation value <state|op|state>."""
    return state.inner(apply(op, state))
