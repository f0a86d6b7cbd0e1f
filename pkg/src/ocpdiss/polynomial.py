"""Sparse multivariate polynomials with real coefficients.

A polynomial is a mapping from exponent tuples to coefficients over an
ordered list of variable names.  Arithmetic requires identical variable
lists; use :meth:`Polynomial.extend` to embed a polynomial in a larger
variable set.
"""

from __future__ import annotations

from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


def monomial_basis(nvars: int, max_degree: int, min_degree: int = 0) -> list[Exponent]:
    """All exponents with ``min_degree <= total degree <= max_degree``.

    Ordered by total degree, then reverse-lexicographically within a degree
    (so ``x0`` comes before ``x1``).
    """
    out: list[Exponent] = []
    for d in range(min_degree, max_degree + 1):
        out.extend(_exponents_of_degree(nvars, d))
    return out


def _exponents_of_degree(nvars: int, d: int) -> list[Exponent]:
    if nvars == 0:
        return [()] if d == 0 else []
    if nvars == 1:
        return [(d,)]
    out = []
    for first in range(d, -1, -1):
        for rest in _exponents_of_degree(nvars - 1, d - first):
            out.append((first,) + rest)
    return out


def basis_size(nvars: int, max_degree: int) -> int:
    return comb(nvars + max_degree, nvars)


class Polynomial:
    """Immutable sparse polynomial.

    Parameters
    ----------
    variables : sequence of str
        Ordered variable names.
    terms : mapping of exponent tuple -> float
        Coefficients; zero entries are dropped.
    """

    __slots__ = ("variables", "terms", "_exps", "_coefs")

    def __init__(self, variables: Sequence[str], terms: Mapping[Exponent, float] | None = None):
        self.variables = tuple(variables)
        n = len(self.variables)
        clean: dict[Exponent, float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(k) for k in e)
            if len(e) != n:
                raise ValueError(f"exponent {e} does not match {n} variables")
            if any(k < 0 for k in e):
                raise ValueError(f"negative exponent {e}")
            c = float(c)
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + c
        self.terms = {e: c for e, c in clean.items() if c != 0.0}
        self._exps = None
        self._coefs = None

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, variables: Sequence[str], value: float) -> "Polynomial":
        return cls(variables, {(0,) * len(variables): value})

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Polynomial":
        return cls(variables)

    @classmethod
    def variable(cls, variables: Sequence[str], name: str | int) -> "Polynomial":
        idx = name if isinstance(name, int) else list(variables).index(name)
        e = [0] * len(variables)
        e[idx] = 1
        return cls(variables, {tuple(e): 1.0})

    @classmethod
    def univariate(cls, variables: Sequence[str], name: str | int, coeffs: Sequence[float],
                   center: float = 0.0) -> "Polynomial":
        """``sum_k coeffs[k] * (v - center)**k`` for the named variable."""
        v = cls.variable(variables, name) - center
        out = cls.zero(variables)
        power = cls.constant(variables, 1.0)
        for c in coeffs:
            out = out + power * c
            power = power * v
        return out

    # -- basic properties ---------------------------------------------
    @property
    def nvars(self) -> int:
        return len(self.variables)

    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(e) for e in self.terms), default=-1)

    def degree_in(self, var: str | int) -> int:
        i = self._index(var)
        return max((e[i] for e in self.terms), default=-1)

    def coefficient(self, exponent: Exponent) -> float:
        return self.terms.get(tuple(exponent), 0.0)

    def is_zero(self) -> bool:
        return not self.terms

    def _index(self, var: str | int) -> int:
        return var if isinstance(var, int) else self.variables.index(var)

    def _check(self, other: "Polynomial") -> None:
        if self.variables != other.variables:
            raise ValueError(f"variable mismatch: {self.variables} vs {other.variables}")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        return Polynomial.constant(self.variables, float(other))

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other) -> "Polynomial":
        other = self._lift(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.variables, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.variables, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._lift(other) - self

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            s = float(other)
            return Polynomial(self.variables, {e: c * s for e, c in self.terms.items()})
        self._check(other)
        out: dict[Exponent, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.variables, out)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Polynomial":
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.variables, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.variables == other.variables and self.terms == other.terms

    def __hash__(self):
        return hash((self.variables, tuple(sorted(self.terms.items()))))

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=lambda e: (sum(e), tuple(-k for k in e))):
            mon = "*".join(
                v if k == 1 else f"{v}^{k}" for v, k in zip(self.variables, e) if k
            )
            parts.append(f"{self.terms[e]:.6g}" + (f"*{mon}" if mon else ""))
        return " + ".join(parts)

    # -- calculus and substitution ---------------------------------------
    def diff(self, var: str | int) -> "Polynomial":
        i = self._index(var)
        out = {}
        for e, c in self.terms.items():
            if e[i] > 0:
                e2 = list(e)
                e2[i] -= 1
                out[tuple(e2)] = c * e[i]
        return Polynomial(self.variables, out)

    def gradient(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self.nvars)]

    def compose(self, substitutions: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute each variable by a polynomial (all over a common variable list)."""
        if len(substitutions) != self.nvars:
            raise ValueError("need one substitution per variable")
        target = substitutions[0].variables if substitutions else ()
        powers: list[dict[int, Polynomial]] = [
            {0: Polynomial.constant(target, 1.0)} for _ in substitutions
        ]

        def pw(i: int, k: int) -> Polynomial:
            cache = powers[i]
            if k not in cache:
                cache[k] = pw(i, k - 1) * substitutions[i]
            return cache[k]

        out: dict[Exponent, float] = {}
        for e, c in self.terms.items():
            term = Polynomial.constant(target, c)
            for i, k in enumerate(e):
                if k:
                    term = term * pw(i, k)
            for e2, c2 in term.terms.items():
                out[e2] = out.get(e2, 0.0) + c2
        return Polynomial(target, out)

    def affine_substitute(self, offset: Sequence[float], scale: Sequence[float]) -> "Polynomial":
        """Return ``q(y) = p(offset + scale * y)`` over the same variable names."""
        subs = [
            Polynomial.variable(self.variables, i) * float(s) + float(o)
            for i, (o, s) in enumerate(zip(offset, scale))
        ]
        return self.compose(subs)

    def extend(self, variables: Sequence[str]) -> "Polynomial":
        """Embed into a superset of variables (matched by name)."""
        variables = tuple(variables)
        idx = [variables.index(v) for v in self.variables]
        out = {}
        for e, c in self.terms.items():
            e2 = [0] * len(variables)
            for i, k in zip(idx, e):
                e2[i] = k
            out[tuple(e2)] = c
        return Polynomial(variables, out)

    def restrict(self, values: Mapping[str, float]) -> "Polynomial":
        """Fix some variables at numeric values; they are removed from the variable list."""
        keep = [i for i, v in enumerate(self.variables) if v not in values]
        fixed = [(i, float(values[v])) for i, v in enumerate(self.variables) if v in values]
        out: dict[Exponent, float] = {}
        for e, c in self.terms.items():
            for i, val in fixed:
                c *= val ** e[i]
            e2 = tuple(e[i] for i in keep)
            out[e2] = out.get(e2, 0.0) + c
        return Polynomial([self.variables[i] for i in keep], out)

    def truncate(self, max_degree: int) -> "Polynomial":
        return Polynomial(self.variables, {e: c for e, c in self.terms.items() if sum(e) <= max_degree})

    # -- evaluation -------------------------------------------------------
    def _tables(self):
        if self._exps is None:
            items = sorted(self.terms.items())
            exps = np.array([e for e, _ in items], dtype=np.int64).reshape(len(items), self.nvars)
            coefs = np.array([c for _, c in items], dtype=float)
            self._exps, self._coefs = exps, coefs
        return self._exps, self._coefs

    def __call__(self, point) -> np.ndarray | float:
        """Evaluate by direct summation over terms.

        ``point`` has shape ``(..., nvars)``; the result has shape ``(...)``.
        """
        pt = np.asarray(point, dtype=float)
        if pt.shape[-1:] != (self.nvars,) and not (self.nvars == 0):
            raise ValueError(f"expected trailing dimension {self.nvars}, got {pt.shape}")
        exps, coefs = self._tables()
        if len(coefs) == 0:
            return np.zeros(pt.shape[:-1]) if pt.ndim > 1 else 0.0
        maxdeg = int(exps.max()) if exps.size else 0
        # powers[..., i, k] = pt[..., i] ** k
        powers = pt[..., :, None] ** np.arange(maxdeg + 1)
        val = np.ones(pt.shape[:-1] + (len(coefs),))
        for i in range(self.nvars):
            val = val * powers[..., i, :][..., exps[:, i]]
        out = val @ coefs
        return float(out) if np.ndim(out) == 0 else out

    def items(self) -> Iterable[tuple[Exponent, float]]:
        return self.terms.items()

    def to_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "terms": [[list(e), c] for e, c in sorted(self.terms.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Polynomial":
        return cls(data["variables"], {tuple(e): c for e, c in data["terms"]})


def quadratic_distance(variables: Sequence[str], center: Sequence[float],
                       which: Sequence[int] | None = None) -> Polynomial:
    """``sum_i (v_i - center_i)**2`` over the selected variable indices."""
    which = range(len(center)) if which is None else which
    out = Polynomial.zero(variables)
    for i, c in zip(which, center):
        d = Polynomial.variable(variables, i) - float(c)
        out = out + d * d
    return out

