"""Control systems, stage costs and the stirred-tank reactor benchmark.

Every evaluator is vectorised: states have shape ``(..., n_x)``, inputs
``(..., n_u)`` and the dynamics return ``(..., n_x)``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .polynomial import Polynomial

DynamicsFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

_FD_REL_STEP = 1e-6


def _as_box(box, name: str) -> np.ndarray:
    arr = np.array(box, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be a list of [lower, upper] pairs, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"{name} has lower > upper")
    arr.setflags(write=False)
    return arr


def fd_jacobians(fun: Callable, x: np.ndarray, u: np.ndarray):
    """Central finite-difference Jacobians of a vectorised ``fun(x, u)``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    n_x, n_u = x.shape[-1], u.shape[-1]

    def partials(v, n, which):
        cols = []
        for i in range(n):
            h = _FD_REL_STEP * (1.0 + np.abs(v[..., i]))
            vp, vm = v.copy(), v.copy()
            vp[..., i] += h
            vm[..., i] -= h
            if which == 0:
                d = (fun(vp, u) - fun(vm, u))
            else:
                d = (fun(x, vp) - fun(x, vm))
            cols.append(np.asarray(d) / (2.0 * np.asarray(h)[..., None]))
        return np.stack(cols, axis=-1)

    return partials(x, n_x, 0), partials(u, n_u, 1)


@dataclass(frozen=True)
class ControlSystem:
    """Input-affine or general nonlinear system ``dx/dt = f(x, u)`` on a box ``X x U``."""

    n_x: int
    n_u: int
    dynamics: DynamicsFn
    state_box: np.ndarray
    input_box: np.ndarray
    label: str = "system"
    jacobian: JacobianFn | None = None
    state_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()
    polynomial: "PolynomialVectorField | None" = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "state_box", _as_box(self.state_box, "state_box"))
        object.__setattr__(self, "input_box", _as_box(self.input_box, "input_box"))
        if self.state_box.shape[0] != self.n_x or self.input_box.shape[0] != self.n_u:
            raise ValueError("box dimensions do not match n_x / n_u")
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i + 1}" for i in range(self.n_x)))
        if not self.input_names:
            object.__setattr__(self, "input_names", tuple(f"u{i + 1}" for i in range(self.n_u)))

    def f(self, x, u) -> np.ndarray:
        return np.asarray(self.dynamics(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """``(df/dx, df/du)`` with shapes ``(..., n_x, n_x)`` and ``(..., n_x, n_u)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if self.jacobian is not None:
            return self.jacobian(x, u)
        return fd_jacobians(self.f, x, u)

    # scaled coordinates map each box onto [-1, 1]
    @property
    def state_center(self) -> np.ndarray:
        return self.state_box.mean(axis=1)

    @property
    def state_halfwidth(self) -> np.ndarray:
        return np.maximum(0.5 * (self.state_box[:, 1] - self.state_box[:, 0]), 1e-300)

    @property
    def input_center(self) -> np.ndarray:
        return self.input_box.mean(axis=1)

    @property
    def input_halfwidth(self) -> np.ndarray:
        return np.maximum(0.5 * (self.input_box[:, 1] - self.input_box[:, 0]), 1e-300)

    def scale_state(self, x) -> np.ndarray:
        return (np.asarray(x, float) - self.state_center) / self.state_halfwidth

    def scale_input(self, u) -> np.ndarray:
        return (np.asarray(u, float) - self.input_center) / self.input_halfwidth

    def input_vertices(self) -> np.ndarray:
        """Vertices of ``U``, ordered lexicographically (lower bound first)."""
        grids = np.meshgrid(*[b for b in self.input_box], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class CostFunction:
    """Stage cost ``F(x, u)``; optionally backed by a polynomial in ``(x, u)``."""

    stage_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = "cost"
    gradient: Callable | None = None
    polynomial: Polynomial | None = field(default=None, compare=False)

    def __call__(self, x, u):
        return self.stage_cost(np.asarray(x, float), np.asarray(u, float))

    def gradients(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """``(dF/dx, dF/du)`` with shapes ``(..., n_x)`` and ``(..., n_u)``."""
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        if self.gradient is not None:
            return self.gradient(x, u)
        fx, fu = fd_jacobians(lambda a, b: np.asarray(self.stage_cost(a, b))[..., None], x, u)
        return fx[..., 0, :], fu[..., 0, :]

    def lipschitz_bound(self, sys: ControlSystem) -> float:
        """Upper bound on ``|grad F|`` over ``X x U``.

        Polynomial costs get a rigorous bound by interval arithmetic on each
        partial derivative; otherwise the maximum over a dense sample plus a
        10% margin is returned.
        """
        box = np.vstack([sys.state_box, sys.input_box])
        if self.polynomial is not None:
            mags = np.max(np.abs(box), axis=1)
            total = 0.0
            for d in self.polynomial.gradient():
                b = sum(abs(c) * float(np.prod(mags ** np.array(e))) for e, c in d.items())
                total += b * b
            return float(np.sqrt(total))
        rng = np.random.default_rng(0)
        pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((4096, box.shape[0]))
        gx, gu = self.gradients(pts[:, : sys.n_x], pts[:, sys.n_x:])
        return 1.1 * float(np.max(np.linalg.norm(np.concatenate([gx, gu], axis=-1), axis=-1)))


def cost_from_polynomial(p: Polynomial, n_x: int, label: str = "cost") -> CostFunction:
    grads = p.gradient()

    def F(x, u):
        return p(_stack(x, u))

    def G(x, u):
        z = _stack(x, u)
        g = np.stack([np.broadcast_to(gi(z), z.shape[:-1]) for gi in grads], axis=-1)
        return g[..., :n_x], g[..., n_x:]

    return CostFunction(F, label=label, gradient=G, polynomial=p)


def _stack(x, u) -> np.ndarray:
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    return np.concatenate(
        [np.broadcast_to(x, shape + x.shape[-1:]), np.broadcast_to(u, shape + u.shape[-1:])], axis=-1
    )


# ---------------------------------------------------------------------------
# polynomial vector fields


@dataclass(frozen=True)
class PolynomialVectorField:
    """``dx/dt = p(x, u)`` with one polynomial per state coordinate.

    All coordinate polynomials share the variable list ``state_names +
    input_names``.
    """

    coords: tuple[Polynomial, ...]
    n_x: int
    n_u: int

    def __post_init__(self):
        coords = tuple(self.coords)
        object.__setattr__(self, "coords", coords)
        if len(coords) != self.n_x:
            raise ValueError("need one polynomial per state")
        vars_ = coords[0].variables
        if len(vars_) != self.n_x + self.n_u or any(c.variables != vars_ for c in coords):
            raise ValueError("coordinate polynomials must share (x, u) variables")

    @property
    def variables(self) -> tuple[str, ...]:
        return self.coords[0].variables

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(c.degree() for c in self.coords)

    @property
    def input_affine(self) -> bool:
        return all(c.degree_in(self.n_x + j) <= 1 for c in self.coords for j in range(self.n_u))

    def __call__(self, x, u) -> np.ndarray:
        z = _stack(x, u)
        return np.stack([np.broadcast_to(c(z), z.shape[:-1]) for c in self.coords], axis=-1)

    def jacobian(self, x, u):
        z = _stack(x, u)
        rows = []
        for c in self.coords:
            rows.append(np.stack([np.broadcast_to(d(z), z.shape[:-1]) for d in _grad_cached(c)], axis=-1))
        J = np.stack(rows, axis=-2)
        return J[..., : self.n_x], J[..., self.n_x:]

    def to_system(self, state_box, input_box, label: str = "polynomial") -> ControlSystem:
        names = self.variables
        return ControlSystem(
            n_x=self.n_x, n_u=self.n_u, dynamics=self.__call__, state_box=state_box,
            input_box=input_box, label=label, jacobian=self.jacobian,
            state_names=names[: self.n_x], input_names=names[self.n_x:], polynomial=self,
        )


_GRAD_CACHE: dict[int, tuple[Polynomial, list[Polynomial]]] = {}


def _grad_cached(p: Polynomial) -> list[Polynomial]:
    hit = _GRAD_CACHE.get(id(p))
    if hit is None or hit[0] is not p:
        hit = (p, p.gradient())
        _GRAD_CACHE[id(p)] = hit
    return hit[1]


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Pow, ast.Div)


def parse_polynomial(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse an arithmetic expression such as ``"(x - 1)**2 + 0.5*u"``.

    Only numbers, the given variable names, ``+ - * /`` (division by
    constants) and non-negative integer powers (``**`` or ``^``) are accepted.
    """
    variables = tuple(variables)
    tree = ast.parse(text.replace("^", "**"), mode="eval")

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in variables:
                raise ValueError(f"unknown variable {node.id!r} in {text!r}")
            return Polynomial.variable(variables, node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                if isinstance(b, Polynomial):
                    raise ValueError(f"division by a polynomial in {text!r}")
                return a / b
            if isinstance(b, Polynomial) or b != int(b) or b < 0:
                raise ValueError(f"exponent must be a non-negative integer in {text!r}")
            return a ** int(b) if isinstance(a, Polynomial) else a ** b
        raise ValueError(f"unsupported syntax in {text!r}")

    out = walk(tree)
    return out if isinstance(out, Polynomial) else Polynomial.constant(variables, out)


def polynomial_system(states: Sequence[str], inputs: Sequence[str], dynamics: Sequence[str],
                      state_box, input_box, label: str = "polynomial") -> ControlSystem:
    names = tuple(states) + tuple(inputs)
    coords = [parse_polynomial(expr, names) for expr in dynamics]
    vf = PolynomialVectorField(tuple(coords), len(states), len(inputs))
    return vf.to_system(state_box, input_box, label=label)


# ---------------------------------------------------------------------------
# stirred-tank reactor

REACTOR_STATES = ("cA", "cB", "theta")
REACTOR_INPUTS = ("u1", "u2")
REACTOR_STATE_BOX = ((0.0, 6.0), (0.0, 4.0), (70.0, 150.0))
REACTOR_INPUT_BOX = ((3.0, 35.0), (0.0, 200.0))


@dataclass(frozen=True)
class ReactorParams:
    """Van de Vusse reactor constants (units: h, mol/l, degC, kJ/mol).

    The defaults are the widely used benchmark values; ``delta`` is
    ``1/(rho*Cp)`` and ``alpha_heat`` is ``kw*AR/(rho*Cp*VR)`` with
    ``rho=0.9342 kg/l``, ``Cp=3.01 kJ/(kg K)``, ``kw=4032 kJ/(h m^2 K)``,
    ``AR=0.215 m^2``, ``VR=10 l``.  ``theta0`` (Celsius to Kelvin offset) is an
    assumption, not a published value for this model.
    """

    k10: float = 1.287e12
    k20: float = 1.287e12
    k30: float = 9.043e9
    E1: float = 9758.3
    E2: float = 9758.3
    E3: float = 8560.0
    dHAB: float = 4.2
    dHBC: float = -11.0
    dHAD: float = -41.85
    delta: float = 1.0 / (0.9342 * 3.01)
    alpha_heat: float = 4032.0 * 0.215 / (0.9342 * 3.01 * 10.0)
    c_in: float = 5.1
    theta_in: float = 104.9
    theta0: float = 273.15
    beta: float = 1.0

    def __post_init__(self):
        for name in ("k10", "k20", "k30"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.beta > 0:
            raise ValueError("beta must be strictly positive")
        if not self.theta0 > 0:
            raise ValueError("theta0 must be strictly positive")

    @property
    def prefactors(self) -> tuple[float, float, float]:
        return (self.k10, self.k20, self.k30)

    @property
    def activations(self) -> tuple[float, float, float]:
        return (self.E1, self.E2, self.E3)

    def rates(self, theta):
        """Arrhenius rates ``(k1, k2, k3)`` at temperature ``theta`` (degC)."""
        s = np.asarray(theta, float) + self.theta0
        return tuple(k0 * np.exp(-E / s) for k0, E in zip(self.prefactors, self.activations))


def _reactor_rhs(p: ReactorParams, x, u, k1, k2, k3):
    cA, cB, th = x[..., 0], x[..., 1], x[..., 2]
    u1, u2 = u[..., 0], u[..., 1]
    rA = k1 * cA + k3 * cA * cA
    rB = k1 * cA - k2 * cB
    h = -p.delta * (k1 * cA * p.dHAB + k2 * cB * p.dHBC + k3 * cA * cA * p.dHAD)
    return np.stack(
        np.broadcast_arrays(
            -rA + (p.c_in - cA) * u1,
            rB - cB * u1,
            h + p.alpha_heat * (u2 - th) + (p.theta_in - th) * u1,
        ),
        axis=-1,
    )


def reactor_system(params: ReactorParams | None = None, label: str = "reactor") -> ControlSystem:
    """Three-state, two-input stirred-tank reactor with exact Arrhenius kinetics."""
    p = params or ReactorParams()

    def f(x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        k1, k2, k3 = p.rates(x[..., 2])
        return _reactor_rhs(p, x, u, k1, k2, k3)

    def jac(x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        cA, cB, th = (np.broadcast_to(x[..., i], shape) for i in range(3))
        u1, u2 = (np.broadcast_to(u[..., i], shape) for i in range(2))
        k1, k2, k3 = p.rates(th)
        s2 = (th + p.theta0) ** 2
        d1, d2, d3 = k1 * p.E1 / s2, k2 * p.E2 / s2, k3 * p.E3 / s2
        fx = np.zeros(shape + (3, 3))
        fu = np.zeros(shape + (3, 2))
        fx[..., 0, 0] = -k1 - 2 * k3 * cA - u1
        fx[..., 0, 2] = -(d1 * cA + d3 * cA * cA)
        fx[..., 1, 0] = k1
        fx[..., 1, 1] = -k2 - u1
        fx[..., 1, 2] = d1 * cA - d2 * cB
        fx[..., 2, 0] = -p.delta * (k1 * p.dHAB + 2 * k3 * cA * p.dHAD)
        fx[..., 2, 1] = -p.delta * k2 * p.dHBC
        fx[..., 2, 2] = (-p.delta * (d1 * cA * p.dHAB + d2 * cB * p.dHBC + d3 * cA * cA * p.dHAD)
                         - p.alpha_heat - u1)
        fu[..., 0, 0] = p.c_in - cA
        fu[..., 1, 0] = -cB
        fu[..., 2, 0] = p.theta_in - th
        fu[..., 2, 1] = p.alpha_heat
        return fx, fu

    return ControlSystem(
        n_x=3, n_u=2, dynamics=f, state_box=REACTOR_STATE_BOX, input_box=REACTOR_INPUT_BOX,
        label=label, jacobian=jac, state_names=REACTOR_STATES, input_names=REACTOR_INPUTS,
    )


def economic_cost(beta: float = 1.0) -> CostFunction:
    """Production-rate cost ``F = -beta * cB * u1`` over ``(cA, cB, theta, u1, u2)``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    names = REACTOR_STATES + REACTOR_INPUTS
    p = Polynomial(names, {(0, 1, 0, 1, 0): -beta})
    return cost_from_polynomial(p, n_x=3, label="economic")


def taylor_arrhenius(params: ReactorParams, order: int = 4, center: float = 110.0) -> np.ndarray:
    """Taylor coefficients of each rate ``k_i(theta)`` about ``center``.

    Returns an array of shape ``(3, order + 1)``; row ``i`` holds ``c_n`` with
    ``k_i(theta) ~ sum_n c_n (theta - center)**n``.  The coefficients are
    exact: the exponent ``-E/(s_c + h)`` is expanded as a geometric series in
    ``h`` and the exponential of that series is built by the standard
    power-series recurrence.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    s_c = center + params.theta0
    if not s_c > 0:
        raise ValueError("center + theta0 must be positive")
    out = np.zeros((3, order + 1))
    for i, (k0, E) in enumerate(zip(params.prefactors, params.activations)):
        g = np.array([(-1.0) ** (n + 1) * E / s_c ** (n + 1) for n in range(order + 1)])
        a = np.zeros(order + 1)
        a[0] = np.exp(g[0])
        for n in range(1, order + 1):
            a[n] = sum(k * g[k] * a[n - k] for k in range(1, n + 1)) / n
        out[i] = k0 * a
    return out


def polynomialize_reactor(params: ReactorParams | None = None, order: int = 4,
                          center: float = 110.0) -> PolynomialVectorField:
    """Reactor dynamics with each rate replaced by its Taylor polynomial in ``theta``."""
    p = params or ReactorParams()
    names = REACTOR_STATES + REACTOR_INPUTS
    coeffs = taylor_arrhenius(p, order, center)
    k1, k2, k3 = (Polynomial.univariate(names, "theta", c, center=center) for c in coeffs)
    cA, cB, th, u1, u2 = (Polynomial.variable(names, n) for n in names)
    rA = k1 * cA + k3 * cA * cA
    rB = k1 * cA - k2 * cB
    h = (k1 * cA * p.dHAB + k2 * cB * p.dHBC + k3 * cA * cA * p.dHAD) * (-p.delta)
    coords = (
        -rA + (cA * -1.0 + p.c_in) * u1,
        rB - cB * u1,
        h + (u2 - th) * p.alpha_heat + (th * -1.0 + p.theta_in) * u1,
    )
    return PolynomialVectorField(coords, 3, 2)
