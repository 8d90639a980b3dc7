"""Matrix-level verification of the averaged time-ordered propagator.

For dU = (C(s) + xi(s) V(s)) U ds with Gaussian white advection noise
xi of amplitude g, averaging the time-ordered simplex series pairs the
V factors in Wick fashion; each pair carries delta(s_i - s_j).  A delta
integrated over the ordered simplex gives zero unless the paired slots
are adjacent, in which case it contributes a factor 1/2 on the reduced
simplex.  The surviving terms re-sum to the time-ordered series of the
averaged generator C(s) + (g^2/2) V(s)^2.

This module makes that bookkeeping executable for dense matrix families
with piecewise-polynomial time dependence:

* ``simplex_integrate_term`` evaluates one pairing term, applying the
  contraction rule symbolically (non-adjacent pairings return an exact
  zero matrix, never a small one);
* ``averaged_series`` sums the series of the averaged generator;
* ``raw_wick_expansion`` enumerates every pairing of every order and
  checks, order by order and bit for bit, that the survivors reproduce
  ``averaged_series``;
* ``mc_matrix_propagator`` is an independent Monte Carlo average of the
  Stratonovich matrix SDE dU = C U dt + g V U o dB (Heun scheme, no
  drift correction inserted by hand).

Simplex integrals are evaluated exactly: factors are piecewise matrix
polynomials in s, and the nested integrals are computed by repeated
polynomial antiderivatives, so the only error is floating-point
round-off.  An iterated Gauss-Legendre path (``quadrature_order``)
cross-checks the closed form in tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .noise import stream_generator

__all__ = [
    "PropagatorError",
    "MatrixPolynomial",
    "OperatorFamily",
    "PairingTerm",
    "reduce_pairing",
    "enumerate_pairings",
    "simplex_integrate_term",
    "AveragedSeries",
    "averaged_series",
    "WickExpansion",
    "raw_wick_expansion",
    "averaged_generator_expm",
    "averaged_generator_ode",
    "MCPropagator",
    "mc_matrix_propagator",
    "kuramoto_sivashinsky_family",
]

_MAX_DIMENSION = 64
_MAX_ORDER = 6


class PropagatorError(ValueError):
    """Invalid operator family, pairing term, or evaluation request."""


# ---------------------------------------------------------------------------
# piecewise matrix polynomials in time


@dataclass(frozen=True)
class MatrixPolynomial:
    """Piecewise matrix-valued polynomial in the time variable.

    ``splits`` are the interior breakpoints (possibly empty); piece i
    covers s in [splits[i-1], splits[i]) and holds power-basis
    coefficients ``coeffs[i]`` of shape (degree+1, n, n) in the global
    variable s.
    """

    splits: tuple
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != len(self.splits) + 1:
            raise PropagatorError("need exactly one coefficient block per piece")
        if any(not (b > a) for a, b in zip(self.splits, self.splits[1:])):
            raise PropagatorError("splits must be strictly increasing")
        if self.splits and not self.splits[0] > 0.0:
            raise PropagatorError("splits are interior breakpoints and must be > 0")
        shape = None
        for block in self.coeffs:
            if block.ndim != 3 or block.shape[1] != block.shape[2]:
                raise PropagatorError("coefficient blocks must have shape (deg+1, n, n)")
            if shape is None:
                shape = block.shape[1:]
            elif block.shape[1:] != shape:
                raise PropagatorError("pieces must share the matrix dimension")
            if not np.all(np.isfinite(block)):
                raise PropagatorError("coefficients must be finite")

    @classmethod
    def constant(cls, matrix) -> "MatrixPolynomial":
        m = np.atleast_2d(np.asarray(matrix))
        return cls(splits=(), coeffs=(m[None, :, :].copy(),))

    @classmethod
    def from_coefficients(cls, matrices) -> "MatrixPolynomial":
        """Polynomial sum_k matrices[k] * s^k (single piece)."""
        blocks = np.stack([np.atleast_2d(np.asarray(m)) for m in matrices])
        return cls(splits=(), coeffs=(blocks,))

    @classmethod
    def piecewise_constant(cls, splits, matrices) -> "MatrixPolynomial":
        if len(matrices) != len(splits) + 1:
            raise PropagatorError("need one matrix per piece (len(splits) + 1)")
        coeffs = tuple(np.atleast_2d(np.asarray(m))[None, :, :].copy()
                       for m in matrices)
        return cls(splits=tuple(float(s) for s in splits), coeffs=coeffs)

    @property
    def dimension(self) -> int:
        return self.coeffs[0].shape[1]

    @property
    def dtype(self):
        return np.result_type(*(b.dtype for b in self.coeffs), np.float64)

    def piece_index(self, s: float) -> int:
        return int(np.searchsorted(np.asarray(self.splits), s, side="right"))

    def value(self, s: float) -> np.ndarray:
        block = self.coeffs[self.piece_index(s)]
        out = np.zeros(block.shape[1:], dtype=self.dtype)
        for k in range(block.shape[0] - 1, -1, -1):
            out = out * s + block[k]
        return out


def _merge_splits(a: MatrixPolynomial, b: MatrixPolynomial) -> tuple:
    merged = sorted(set(a.splits) | set(b.splits))
    return tuple(merged)


def _restrict(poly: MatrixPolynomial, splits: tuple) -> tuple:
    """Coefficient blocks of ``poly`` on each piece of a finer split set."""
    lefts = (0.0,) + splits
    blocks = []
    for idx, left in enumerate(lefts):
        # representative point inside the target piece
        if idx < len(splits):
            probe = 0.5 * (left + splits[idx])
        else:
            probe = left
        blocks.append(poly.coeffs[poly.piece_index(probe)].copy())
    return tuple(blocks)


def _poly_mul(a: MatrixPolynomial, b: MatrixPolynomial) -> MatrixPolynomial:
    """Pointwise matrix product a(s) @ b(s) as a piecewise polynomial."""
    splits = _merge_splits(a, b)
    blocks = []
    for pa, pb in zip(_restrict(a, splits), _restrict(b, splits)):
        da, db = pa.shape[0], pb.shape[0]
        dtype = np.result_type(pa.dtype, pb.dtype)
        out = np.zeros((da + db - 1,) + pa.shape[1:], dtype=dtype)
        for i in range(da):
            for j in range(db):
                out[i + j] += pa[i] @ pb[j]
        blocks.append(out)
    return MatrixPolynomial(splits=splits, coeffs=tuple(blocks))


def _poly_scale(a: MatrixPolynomial, c: float) -> MatrixPolynomial:
    return MatrixPolynomial(splits=a.splits,
                            coeffs=tuple(c * block for block in a.coeffs))


def _poly_antiderivative(a: MatrixPolynomial) -> MatrixPolynomial:
    """The running integral s -> int_0^s a(u) du, continuous across splits."""
    n = a.dimension
    dtype = a.dtype
    blocks = []
    running = np.zeros((n, n), dtype=dtype)  # value at the left edge of the piece
    edges = (0.0,) + a.splits
    for block, left in zip(a.coeffs, edges):
        deg = block.shape[0]
        anti = np.zeros((deg + 1, n, n), dtype=dtype)
        for k in range(deg):
            anti[k + 1] = block[k] / (k + 1)
        # fix the constant so the piece starts from the accumulated value
        start = np.zeros((n, n), dtype=dtype)
        for k in range(deg, 0, -1):
            start = start * left + anti[k]
        start = start * left
        anti[0] = running - start
        blocks.append(anti)
        right = a.splits[len(blocks) - 1] if len(blocks) - 1 < len(a.splits) else None
        if right is not None:
            val = np.zeros((n, n), dtype=dtype)
            for k in range(deg, -1, -1):
                val = val * right + anti[k]
            running = val
    return MatrixPolynomial(splits=a.splits, coeffs=tuple(blocks))


# ---------------------------------------------------------------------------
# operator families


def _as_poly(op, name: str) -> MatrixPolynomial:
    if isinstance(op, MatrixPolynomial):
        return op
    arr = np.asarray(op)
    if arr.ndim == 2:
        return MatrixPolynomial.constant(arr)
    raise PropagatorError(f"{name} must be a matrix or a MatrixPolynomial")


@dataclass(frozen=True)
class OperatorFamily:
    """Dense matrix surrogate for the random evolution dU = (C + xi V) U ds.

    ``c_op`` and ``v_op`` are constant matrices or piecewise matrix
    polynomials in s; ``g`` is the white-noise amplitude.
    """

    c_op: MatrixPolynomial
    v_op: MatrixPolynomial
    g: float
    dimension: int = dc_field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "c_op", _as_poly(self.c_op, "c_op"))
        object.__setattr__(self, "v_op", _as_poly(self.v_op, "v_op"))
        if self.c_op.dimension != self.v_op.dimension:
            raise PropagatorError("C and V must share the matrix dimension")
        n = self.c_op.dimension
        if n < 1 or n > _MAX_DIMENSION:
            raise PropagatorError(f"dimension must be in [1, {_MAX_DIMENSION}], got {n}")
        if not (math.isfinite(self.g) and self.g >= 0.0):
            raise PropagatorError(f"noise amplitude g must be >= 0, got {self.g}")
        object.__setattr__(self, "dimension", n)

    @property
    def dtype(self):
        return np.result_type(self.c_op.dtype, self.v_op.dtype)

    @property
    def is_constant(self) -> bool:
        return (not self.c_op.splits and not self.v_op.splits
                and self.c_op.coeffs[0].shape[0] == 1
                and self.v_op.coeffs[0].shape[0] == 1)

    def averaged_generator(self) -> MatrixPolynomial:
        """The closed generator C(s) + (g^2/2) V(s)^2 as a polynomial."""
        w = _poly_scale(_poly_mul(self.v_op, self.v_op), 0.5 * self.g**2)
        splits = _merge_splits(self.c_op, w)
        blocks = []
        for pc, pw in zip(_restrict(self.c_op, splits), _restrict(w, splits)):
            deg = max(pc.shape[0], pw.shape[0])
            out = np.zeros((deg,) + pc.shape[1:], dtype=np.result_type(pc, pw))
            out[: pc.shape[0]] += pc
            out[: pw.shape[0]] += pw
            blocks.append(out)
        return MatrixPolynomial(splits=splits, coeffs=tuple(blocks))


# ---------------------------------------------------------------------------
# pairing terms and the contraction rule


@dataclass(frozen=True)
class PairingTerm:
    """One cluster term: order n with Wick pairs among the V slots.

    ``pairs`` lists (i, j) with i > j, 1-based slot indices; paired
    slots carry V factors, all remaining slots carry C factors.
    """

    order: int
    pairs: tuple

    def __post_init__(self):
        if self.order < 1:
            raise PropagatorError(f"order must be >= 1, got {self.order}")
        canon = []
        for pair in self.pairs:
            i, j = (int(pair[0]), int(pair[1]))
            if i <= j:
                raise PropagatorError(f"pair must be ordered (i, j) with i > j: {pair}")
            if not (1 <= j and i <= self.order):
                raise PropagatorError(f"pair {pair} outside slots 1..{self.order}")
            canon.append((i, j))
        used = [k for p in canon for k in p]
        if len(set(used)) != len(used):
            raise PropagatorError("pairs must be disjoint (each slot used once)")
        object.__setattr__(self, "pairs", tuple(sorted(canon, key=lambda p: p[1])))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def v_positions(self) -> tuple:
        return tuple(sorted(k for p in self.pairs for k in p))

    @property
    def c_positions(self) -> tuple:
        taken = set(self.v_positions)
        return tuple(k for k in range(1, self.order + 1) if k not in taken)

    @property
    def is_adjacent(self) -> bool:
        return all(i == j + 1 for i, j in self.pairs)


def reduce_pairing(term: PairingTerm, direction: str = "down") -> tuple:
    """Contract the deltas of an all-adjacent pairing into a factor word.

    Returns a tuple over {"C", "W"} ordered by ascending time slot,
    where "W" marks a contracted pair (the factor (g^2/2) V(s)^2) and
    "C" an unpaired slot.  ``direction`` selects whether pairs are
    reduced from the highest slot index downward (the documented
    convention) or upward; for disjoint adjacent pairs both give the
    same word, which the tests assert.
    """
    if not term.is_adjacent:
        raise PropagatorError("only all-adjacent pairings reduce to a word")
    if direction not in ("down", "up"):
        raise PropagatorError(f"direction must be 'down' or 'up', got {direction!r}")
    slots = [("C", k) for k in range(1, term.order + 1)]
    ordered = sorted(term.pairs, key=lambda p: p[0], reverse=(direction == "down"))
    for i, j in ordered:
        keep = [(lab, k) for lab, k in slots if k != i]
        slots = [("W", k) if k == j else (lab, k) for lab, k in keep]
    return tuple(lab for lab, _ in slots)


def enumerate_pairings(order: int):
    """All cluster terms of the given order (every Wick pairing).

    Yields PairingTerm objects: for each even-sized subset of slots and
    each perfect matching of that subset.  The count at order n is
    sum_k binom(n, 2k) (2k-1)!!.
    """
    if order < 1:
        raise PropagatorError(f"order must be >= 1, got {order}")

    def matchings(elems):
        if not elems:
            yield ()
            return
        first, rest = elems[0], elems[1:]
        for idx, partner in enumerate(rest):
            for sub in matchings(rest[:idx] + rest[idx + 1:]):
                yield ((partner, first),) + sub

    slots = tuple(range(1, order + 1))
    for k in range(order // 2 + 1):
        for subset in itertools.combinations(slots, 2 * k):
            for match in matchings(subset):
                yield PairingTerm(order=order, pairs=match)


# ---------------------------------------------------------------------------
# simplex integration


def _factor(family: OperatorFamily, label: str) -> MatrixPolynomial:
    if label == "C":
        return family.c_op
    if label == "W":
        return _poly_scale(_poly_mul(family.v_op, family.v_op), 0.5 * family.g**2)
    raise PropagatorError(f"unknown factor label {label!r}")


def _word_integral(family: OperatorFamily, word: tuple, t: float) -> np.ndarray:
    """Exact ordered-simplex integral of the factor word.

    Computes int over 0 <= s_1 <= ... <= s_m <= t of
    F_m(s_m) ... F_1(s_1) by nested polynomial antiderivatives, where
    word[k-1] labels the factor at slot k.
    """
    running = MatrixPolynomial.constant(
        np.eye(family.dimension, dtype=family.dtype))
    for label in word:
        running = _poly_antiderivative(_poly_mul(_factor(family, label), running))
    return running.value(t)


def _word_gl(family: OperatorFamily, word: tuple, t: float, order: int) -> np.ndarray:
    """Iterated Gauss-Legendre evaluation of the same nested integral."""
    nodes, weights = leggauss(order)
    factors = [_factor(family, label) for label in word]
    splits = sorted(set(family.c_op.splits) | set(family.v_op.splits))
    eye = np.eye(family.dimension, dtype=family.dtype)

    def rec(j: int, upper: float) -> np.ndarray:
        if j < 0:
            return eye
        total = np.zeros((family.dimension, family.dimension), dtype=family.dtype)
        edges = [0.0] + [s for s in splits if 0.0 < s < upper] + [upper]
        for a, b in zip(edges, edges[1:]):
            half = 0.5 * (b - a)
            mid = 0.5 * (b + a)
            for x, w in zip(nodes, weights):
                s = mid + half * x
                total += (half * w) * (factors[j].value(s) @ rec(j - 1, s))
        return total

    return rec(len(word) - 1, t)


def simplex_integrate_term(family: OperatorFamily, term: PairingTerm, t: float,
                           quadrature_order: int | None = None) -> np.ndarray:
    """Integrate one cluster term over the ordered simplex of its order.

    Any pairing containing a non-adjacent pair (i > j + 1) integrates
    to the exact zero matrix: the delta's support meets the simplex in
    a lower-dimensional face.  All-adjacent pairings contract to a word
    of C and (g^2/2) V^2 factors, each pair contributing one factor
    1/2, integrated over the reduced simplex.  The default evaluation
    is exact (piecewise-polynomial antiderivatives); a positive
    ``quadrature_order`` switches to iterated Gauss-Legendre with a
    convergence check.
    """
    if not t > 0.0:
        raise PropagatorError(f"t must be positive, got {t}")
    n = family.dimension
    if not term.is_adjacent:
        return np.zeros((n, n), dtype=family.dtype)
    word = reduce_pairing(term)
    if quadrature_order is None:
        return _word_integral(family, word, t)
    if quadrature_order < 2:
        raise PropagatorError("quadrature_order must be >= 2")
    coarse = _word_gl(family, word, t, quadrature_order)
    fine = _word_gl(family, word, t, quadrature_order + 4)
    scale = max(1.0, float(np.linalg.norm(fine)))
    if float(np.linalg.norm(fine - coarse)) > 1e-12 * scale:
        raise PropagatorError(
            "quadrature not converged: raise quadrature_order "
            f"(order {quadrature_order} vs {quadrature_order + 4} differ by "
            f"{float(np.linalg.norm(fine - coarse)):.3e})")
    return coarse


# ---------------------------------------------------------------------------
# series drivers


def _check_series_args(family: OperatorFamily, t: float, max_order: int) -> None:
    if not t > 0.0:
        raise PropagatorError(f"t must be positive, got {t}")
    if not 1 <= max_order <= _MAX_ORDER:
        raise PropagatorError(
            f"max_order must be in [1, {_MAX_ORDER}] (combinatorial budget), "
            f"got {max_order}")


def _grade(word: tuple) -> int:
    """Expansion order of a word: C counts one slot, W two (a merged pair)."""
    return len(word) + sum(1 for lab in word if lab == "W")


def _grade_sums(word_values: dict, max_order: int, n: int, dtype) -> dict:
    """Per-expansion-order sums in a canonical (sorted-word) order.

    Both series drivers report their per-order sums through this one
    accumulation, so agreement between them is exact, not approximate.
    """
    out = {}
    for grade in range(1, max_order + 1):
        acc = np.zeros((n, n), dtype=dtype)
        for word in sorted(w for w in word_values if _grade(w) == grade):
            acc = acc + word_values[word]
        out[grade] = acc
    return out


@dataclass(frozen=True)
class AveragedSeries:
    """Truncated time-ordered series of the averaged generator."""

    total: np.ndarray
    by_factor_count: dict
    by_expansion_order: dict
    truncation_estimate: float
    max_order: int


def averaged_series(family: OperatorFamily, t: float, max_order: int) -> AveragedSeries:
    """Sum the time-ordered series of C(s) + (g^2/2) V(s)^2.

    Enumerates every factor word over {C, (g^2/2)V^2} with up to
    ``max_order`` factors and integrates each word exactly over its
    ordered simplex.  ``by_factor_count[m]`` collects words of m
    factors (the m-th term of the averaged series; for constant
    families it equals t^m (C + (g^2/2)V^2)^m / m!).
    ``by_expansion_order[n]`` regroups the same words by the order of
    the underlying raw expansion, counting a V^2 factor as two slots;
    this is the grading in which the raw Wick enumeration matches term
    by term.
    """
    _check_series_args(family, t, max_order)
    n = family.dimension
    dtype = family.dtype
    word_values = {}
    for m in range(1, max_order + 1):
        for word in itertools.product(("C", "W"), repeat=m):
            word_values[word] = _word_integral(family, word, t)
    by_factor = {}
    for m in range(1, max_order + 1):
        acc = np.zeros((n, n), dtype=dtype)
        for word in sorted(w for w in word_values if len(w) == m):
            acc = acc + word_values[word]
        by_factor[m] = acc
    total = np.eye(n, dtype=dtype)
    for m in range(1, max_order + 1):
        total = total + by_factor[m]
    by_order = _grade_sums(word_values, max_order, n, dtype)
    return AveragedSeries(total=total, by_factor_count=by_factor,
                          by_expansion_order=by_order,
                          truncation_estimate=float(
                              np.linalg.norm(by_factor[max_order], 2)),
                          max_order=max_order)


@dataclass(frozen=True)
class WickExpansion:
    """Raw cluster enumeration after the symbolic delta contraction."""

    total: np.ndarray
    by_expansion_order: dict
    terms_by_order: dict
    surviving_by_order: dict
    truncation_estimate: float
    max_order: int


def raw_wick_expansion(family: OperatorFamily, t: float, max_order: int) -> WickExpansion:
    """Enumerate all Wick pairings and check them against the averaged series.

    Every pairing of every order up to ``max_order`` passes through the
    contraction rule; non-adjacent pairings drop out exactly, adjacent
    ones reduce to factor words.  The per-order sums are then required
    to coincide bitwise with the matching orders of
    ``averaged_series`` (same word evaluations, same canonical
    accumulation); a mismatch raises PropagatorError.
    """
    _check_series_args(family, t, max_order)
    n = family.dimension
    dtype = family.dtype
    word_values = {}
    terms_by_order = {}
    surviving_by_order = {}
    for order in range(1, max_order + 1):
        n_terms = 0
        n_surviving = 0
        for term in enumerate_pairings(order):
            n_terms += 1
            if not term.is_adjacent:
                continue
            n_surviving += 1
            word = reduce_pairing(term)
            if word not in word_values:
                word_values[word] = _word_integral(family, word, t)
        terms_by_order[order] = n_terms
        surviving_by_order[order] = n_surviving
    by_order = _grade_sums(word_values, max_order, n, dtype)
    reference = averaged_series(family, t, max_order)
    for order in range(1, max_order + 1):
        if not np.array_equal(by_order[order],
                              reference.by_expansion_order[order]):
            raise PropagatorError(
                f"cluster sum differs from the averaged series at order {order}")
    total = np.eye(n, dtype=dtype)
    for order in range(1, max_order + 1):
        total = total + by_order[order]
    return WickExpansion(total=total, by_expansion_order=by_order,
                         terms_by_order=terms_by_order,
                         surviving_by_order=surviving_by_order,
                         truncation_estimate=float(
                             np.linalg.norm(by_order[max_order], 2)),
                         max_order=max_order)


# ---------------------------------------------------------------------------
# reference propagators of the averaged generator


def averaged_generator_expm(family: OperatorFamily, t: float) -> np.ndarray:
    """exp(t (C + (g^2/2) V^2)) for constant families."""
    if not family.is_constant:
        raise PropagatorError("matrix exponential requires a constant family")
    gen = family.averaged_generator().coeffs[0][0]
    return expm(t * gen)


def averaged_generator_ode(family: OperatorFamily, t: float,
                           rtol: float = 1e-12, atol: float = 1e-14) -> np.ndarray:
    """High-order ODE integration of M' = (C(s) + (g^2/2) V(s)^2) M."""
    if not t > 0.0:
        raise PropagatorError(f"t must be positive, got {t}")
    gen = family.averaged_generator()
    n = family.dimension
    dtype = family.dtype

    def rhs(s, y):
        m = y.reshape(n, n)
        return (gen.value(s) @ m).ravel()

    y0 = np.eye(n, dtype=dtype).ravel()
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=False)
    if not sol.success:
        raise PropagatorError(f"reference ODE integration failed: {sol.message}")
    return sol.y[:, -1].reshape(n, n)


# ---------------------------------------------------------------------------
# Monte Carlo propagator


@dataclass(frozen=True)
class MCPropagator:
    """Sample mean of the random propagator with entrywise standard error."""

    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    dt: float
    seed: int


def mc_matrix_propagator(family: OperatorFamily, t: float, n_paths: int,
                         dt: float, seed: int, chunk_size: int = 512) -> MCPropagator:
    """Monte Carlo average of dU = C U dt + g V U o dB (Stratonovich).

    Uses the Heun predictor-corrector scheme, which converges to the
    Stratonovich solution without inserting the (g^2/2) V^2 correction
    by hand, so the comparison with ``averaged_series`` is an
    independent check of the averaging identity.
    """
    if n_paths < 2:
        raise PropagatorError(f"n_paths must be >= 2, got {n_paths}")
    if not (dt > 0.0 and t > 0.0):
        raise PropagatorError("t and dt must be positive")
    n_steps = int(round(t / dt))
    if n_steps < 1 or abs(n_steps * dt - t) > 1e-9 * max(1.0, t):
        raise PropagatorError(f"t {t} is not an integer multiple of dt {dt}")
    if chunk_size < 1:
        raise PropagatorError("chunk_size must be >= 1")
    n = family.dimension
    dtype = np.result_type(family.dtype, np.float64)
    rng = stream_generator(seed)
    c_vals = [family.c_op.value(k * dt) for k in range(n_steps + 1)]
    v_vals = [family.v_op.value(k * dt) for k in range(n_steps + 1)]
    total = np.zeros((n, n), dtype=dtype)
    sumsq_re = np.zeros((n, n))
    sumsq_im = np.zeros((n, n))
    done = 0
    while done < n_paths:
        p = min(chunk_size, n_paths - done)
        u = np.broadcast_to(np.eye(n, dtype=dtype), (p, n, n)).copy()
        for k in range(n_steps):
            db = rng.normal(0.0, math.sqrt(dt), p)[:, None, None]
            k1 = dt * np.matmul(c_vals[k], u) + family.g * db * np.matmul(v_vals[k], u)
            pred = u + k1
            k2 = (dt * np.matmul(c_vals[k + 1], pred)
                  + family.g * db * np.matmul(v_vals[k + 1], pred))
            u = u + 0.5 * (k1 + k2)
        total += u.sum(axis=0)
        sumsq_re += (u.real**2).sum(axis=0)
        sumsq_im += (u.imag**2).sum(axis=0)
        done += p
    mean = total / n_paths
    var_re = np.maximum(sumsq_re / n_paths - mean.real**2, 0.0)
    var_im = np.maximum(sumsq_im / n_paths - mean.imag**2, 0.0)
    corr = n_paths / (n_paths - 1)
    stderr = np.sqrt((var_re + var_im) * corr / n_paths)
    if np.dtype(family.dtype).kind != "c":
        mean = mean.real
    return MCPropagator(mean=mean, stderr=stderr, n_paths=n_paths, dt=dt, seed=seed)


# ---------------------------------------------------------------------------
# a named family: linearized scalar growth with random transport


def kuramoto_sivashinsky_family(n_modes: int, eps: float, u_hat, g: float) -> OperatorFamily:
    """Fourier-space surrogate of T_t = -T_xx - eps T_xxxx + xi(t) U(x) T_x.

    On modes k = -n_modes..n_modes the deterministic part is the
    diagonal symbol k^2 - eps k^4 and the random part is the
    convolution matrix of U(x) d/dx: V[a, b] = u_hat[k_a - k_b] * i k_b.
    ``u_hat`` maps mode offsets to Fourier coefficients of U and must
    be Hermitian (u_hat[-q] = conj(u_hat[q])) so that U is real.
    """
    if n_modes < 1:
        raise PropagatorError(f"n_modes must be >= 1, got {n_modes}")
    if not (eps >= 0.0 and math.isfinite(eps)):
        raise PropagatorError(f"eps must be >= 0, got {eps}")
    coeffs = {int(q): complex(c) for q, c in dict(u_hat).items()}
    for q, c in coeffs.items():
        mirror = coeffs.get(-q, 0.0)
        if abs(np.conj(c) - mirror) > 1e-12 * max(1.0, abs(c)):
            raise PropagatorError(
                "u_hat must be Hermitian (u_hat[-q] = conj(u_hat[q])) for a real profile")
    ks = np.arange(-n_modes, n_modes + 1)
    c_mat = np.diag((ks**2 - eps * ks**4).astype(complex))
    v_mat = np.zeros((ks.size, ks.size), dtype=complex)
    for a, ka in enumerate(ks):
        for b, kb in enumerate(ks):
            v_mat[a, b] = coeffs.get(int(ka - kb), 0.0) * 1j * kb
    return OperatorFamily(c_op=c_mat, v_op=v_mat, g=g)
