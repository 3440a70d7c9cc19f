"""Sparse multivariate polynomials with real coefficients.

A monomial is a tuple of non-negative exponents, one slot per ambient
variable.  A :class:`Polynomial` maps monomials to ``float`` coefficients;
coefficients smaller than :data:`CANON_TOL` in magnitude are dropped on
construction so that equal polynomials have equal term maps.
"""

from __future__ import annotations

import itertools
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

Monomial = Tuple[int, ...]

CANON_TOL = 1e-14


class DimensionError(ValueError):
    """Operands live in polynomial rings of different dimension."""


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def monomial_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i + j for i, j in zip(a, b))


def grlex_key(m: Monomial):
    """Sort key for graded-lexicographic order (x1 > x2 > ... within a degree)."""
    return (sum(m), tuple(-e for e in m))


def monomial_basis(nvars: int, max_degree: int, parity: Optional[str] = None,
                   min_degree: int = 0) -> List[Monomial]:
    """All monomials of total degree in ``[min_degree, max_degree]``, graded-lex.

    ``parity`` may be ``"even"`` or ``"odd"`` to keep only monomials of that
    total-degree parity.
    """
    if max_degree < 0:
        return []
    if parity not in (None, "even", "odd"):
        raise ValueError(f"unknown parity filter {parity!r}")
    out: List[Monomial] = []
    for d in range(max(min_degree, 0), max_degree + 1):
        if parity == "even" and d % 2:
            continue
        if parity == "odd" and not d % 2:
            continue
        out.extend(_monomials_of_degree(nvars, d))
    return out


def _monomials_of_degree(nvars: int, d: int) -> List[Monomial]:
    if nvars == 0:
        return [()] if d == 0 else []
    if nvars == 1:
        return [(d,)]
    out = []
    for first in range(d, -1, -1):
        for rest in _monomials_of_degree(nvars - 1, d - first):
            out.append((first,) + rest)
    return out


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables."""

    __slots__ = ("_terms", "nvars", "_hash")

    def __init__(self, terms: Optional[Mapping[Monomial, float]] = None, nvars: Optional[int] = None):
        terms = dict(terms or {})
        if nvars is None:
            if not terms:
                raise ValueError("nvars is required for the zero polynomial")
            nvars = len(next(iter(terms)))
        clean: Dict[Monomial, float] = {}
        for m, c in terms.items():
            m = tuple(int(e) for e in m)
            if len(m) != nvars:
                raise DimensionError(f"monomial {m} does not have {nvars} exponents")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
            c = float(c)
            if abs(c) >= CANON_TOL:
                clean[m] = c
        self._terms = clean
        self.nvars = nvars
        self._hash = None

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, c: float, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: c}, nvars)

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def variable(cls, k: int, nvars: int) -> "Polynomial":
        if not 0 <= k < nvars:
            raise IndexError(f"variable index {k} out of range for {nvars} variables")
        m = [0] * nvars
        m[k] = 1
        return cls({tuple(m): 1.0}, nvars)

    @classmethod
    def monomial(cls, m: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls({tuple(m): coeff}, len(m))

    @classmethod
    def variables(cls, nvars: int) -> List["Polynomial"]:
        return [cls.variable(k, nvars) for k in range(nvars)]

    # views ------------------------------------------------------------------
    @property
    def terms(self) -> Dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def monomials(self) -> List[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def coeff(self, m: Monomial) -> float:
        return self._terms.get(tuple(m), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def degree_in(self, k: int) -> int:
        return max((m[k] for m in self._terms), default=-1)

    def constant_term(self) -> float:
        return self._terms.get((0,) * self.nvars, 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # arithmetic ---------------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise DimensionError(f"cannot combine polynomials in {self.nvars} and {other.nvars} variables")
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Polynomial.constant(float(other), self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: Dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = tuple(i + j for i, j in zip(ma, mb))
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(out, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.integer, np.floating)):
            return self.scale(1.0 / float(other))
        return NotImplemented

    def __pow__(self, n: int):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(1.0, self.nvars)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def scale(self, s: float) -> "Polynomial":
        return Polynomial({m: s * c for m, c in self._terms.items()}, self.nvars)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(float(other), self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", tol: float = 1e-9) -> bool:
        return (self - other).max_abs_coeff() <= tol

    # calculus ---------------------------------------------------------------
    def diff(self, k: int) -> "Polynomial":
        out: Dict[Monomial, float] = {}
        for m, c in self._terms.items():
            e = m[k]
            if e:
                dm = m[:k] + (e - 1,) + m[k + 1:]
                out[dm] = out.get(dm, 0.0) + c * e
        return Polynomial(out, self.nvars)

    def grad(self) -> List["Polynomial"]:
        return [self.diff(k) for k in range(self.nvars)]

    # evaluation -------------------------------------------------------------
    def __call__(self, point) -> float:
        return self.evaluate(point)

    def evaluate(self, point) -> float:
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != self.nvars:
            raise DimensionError(f"point has {point.shape[-1]} coordinates, polynomial has {self.nvars} variables")
        if point.ndim > 1:
            return self.evaluate_many(point)
        total = 0.0
        for m, c in self._terms.items():
            v = c
            for x, e in zip(point, m):
                if e:
                    v *= x ** e
            total += v
        return float(total)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(..., nvars)``)."""
        points = np.asarray(points, dtype=float)
        if not self._terms:
            return np.zeros(points.shape[:-1])
        exps = np.array(list(self._terms.keys()), dtype=float)
        coeffs = np.array(list(self._terms.values()))
        powers = np.prod(points[..., None, :] ** exps, axis=-1)
        return powers @ coeffs

    # structure --------------------------------------------------------------
    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``subs[k]`` for variable ``k``; result lives in ``subs``' ring."""
        if len(subs) != self.nvars:
            raise DimensionError("need one substitution per variable")
        if not subs:
            return self
        target = subs[0].nvars
        powers: Dict[Tuple[int, int], Polynomial] = {}

        def pw(k: int, e: int) -> Polynomial:
            key = (k, e)
            if key not in powers:
                powers[key] = subs[k] ** e
            return powers[key]

        out = Polynomial.zero(target)
        for m, c in self._terms.items():
            term = Polynomial.constant(c, target)
            for k, e in enumerate(m):
                if e:
                    term = term * pw(k, e)
            out = out + term
        return out

    def remap(self, index_map: Sequence[int], nvars: int) -> "Polynomial":
        """Move variable ``k`` to slot ``index_map[k]`` of an ``nvars`` ring."""
        out: Dict[Monomial, float] = {}
        for m, c in self._terms.items():
            nm = [0] * nvars
            for k, e in enumerate(m):
                if e:
                    nm[index_map[k]] += e
            nm = tuple(nm)
            out[nm] = out.get(nm, 0.0) + c
        return Polynomial(out, nvars)

    def is_even_under(self, signs: Sequence[int]) -> bool:
        """True when p(s*x) == p(x) for the sign pattern ``signs``."""
        for m in self._terms:
            if _sign_of(m, signs) < 0:
                return False
        return True

    def is_odd_under(self, signs: Sequence[int]) -> bool:
        for m in self._terms:
            if _sign_of(m, signs) > 0:
                return False
        return True

    # printing -----------------------------------------------------------------
    def to_string(self, names: Optional[Sequence[str]] = None) -> str:
        if names is None:
            names = [f"x{k + 1}" for k in range(self.nvars)]
        if not self._terms:
            return "0"
        pieces = []
        for m in sorted(self._terms, key=grlex_key, reverse=True):
            c = self._terms[m]
            factors = []
            for name, e in zip(names, m):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            mag = abs(c)
            if factors:
                body = "*".join(factors) if mag == 1.0 else repr(mag) + "*" + "*".join(factors)
            else:
                body = repr(mag)
            sign = "-" if c < 0 else "+"
            pieces.append((sign, body))
        first_sign, first_body = pieces[0]
        text = ("-" if first_sign == "-" else "") + first_body
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        return text

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r}, nvars={self.nvars})"


def _sign_of(m: Monomial, signs: Sequence[int]) -> int:
    s = 1
    for e, sg in zip(m, signs):
        if sg < 0 and e % 2:
            s = -s
    return s


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def grad(p: Polynomial) -> List[Polynomial]:
    return p.grad()


def evaluate(p: Polynomial, point) -> float:
    return p.evaluate(point)


def lie_derivative(V: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """Rate of change of ``V`` along the flow ``x' = f(x)``: sum_k f_k dV/dx_k."""
    if len(f) != V.nvars:
        raise DimensionError(f"vector field has {len(f)} components, V has {V.nvars} variables")
    out = Polynomial.zero(V.nvars)
    for k, fk in enumerate(f):
        if fk.nvars != V.nvars:
            raise DimensionError("vector field component dimension mismatch")
        dk = V.diff(k)
        if not dk.is_zero():
            out = out + fk * dk
    return out


def monomials_up_to(nvars: int, max_degree: int) -> int:
    """Number of monomials of degree <= max_degree."""
    return math.comb(nvars + max_degree, nvars)


def from_monomials(monos: Iterable[Monomial], coeffs: Iterable[float], nvars: int) -> Polynomial:
    out: Dict[Monomial, float] = {}
    for m, c in zip(monos, coeffs):
        out[tuple(m)] = out.get(tuple(m), 0.0) + float(c)
    return Polynomial(out, nvars)


def sign_symmetries(nvars: int) -> Iterable[Tuple[int, ...]]:
    """All non-trivial sign patterns in {+1,-1}^nvars."""
    for signs in itertools.product((1, -1), repeat=nvars):
        if any(s < 0 for s in signs):
            yield signs
