"""Hebb-Rosenblatt plastic memory.

The weights ``W`` are rebuilt for every image during the forward pass. Each
write applies::

    o = relu6(W^T e + theta * e)
    W <- W + eta * outer(e, o) - delta * W

with input index on rows and output index on columns, so ``W^T e`` is
``sum_mu W[mu, nu] * e[mu]``. Reads project a query the same way but drop
the ``theta`` term and never touch ``W``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Module, Parameter, Tensor, matmul, outer, relu6
from .autodiff.tensor import as_tensor

RELU6_BOUND = 6.0
DEFAULT_RATES = (0.4, 0.2, 0.5)  # eta, delta, theta


class MemoryState(enum.Enum):
    UPDATE = "update"
    INTERMEDIATE = "intermediate"
    TERMINAL = "terminal"


class MemoryStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateTriple:
    eta: float
    delta: float
    theta: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.eta, self.delta, self.theta


@dataclass
class StabilityReport:
    satisfied: bool
    violations: list[str] = field(default_factory=list)
    bound: float | None = None


@dataclass
class EquilibriumResult:
    gamma: np.ndarray
    converged: bool
    iterations: int
    history: list[np.ndarray]
    hit_bound: bool = False


def _rate(value, learnable: bool) -> Parameter:
    return Parameter(float(value), requires_grad=learnable)


class HebbRosenblattMemory(Module):
    """Per-sample plastic memory of size ``M`` with rates (eta, delta, theta)."""

    def __init__(self, size: int, eta: float = 0.4, delta: float = 0.2, theta: float = 0.5,
                 learnable: bool = False):
        self.size = size
        self.eta = _rate(eta, learnable)
        self.delta = _rate(delta, learnable)
        self.theta = _rate(theta, learnable)
        self.weights: Tensor | None = None
        self.state = MemoryState.UPDATE
        self.writes = 0
        self.reads = 0

    @property
    def rates(self) -> RateTriple:
        return RateTriple(self.eta.item(), self.delta.item(), self.theta.item())

    def reset(self, batch_size: int | None = None) -> "HebbRosenblattMemory":
        shape = (self.size, self.size) if batch_size is None else (batch_size, self.size, self.size)
        self.weights = Tensor(np.zeros(shape))
        self.state = MemoryState.UPDATE
        self.writes = 0
        self.reads = 0
        return self

    def _check_input(self, v: Tensor, what: str) -> None:
        if self.weights is None:
            raise MemoryStateError("memory used before reset()")
        if v.shape[-1] != self.size or v.shape[:-1] != self.weights.shape[:-2]:
            raise ValueError(f"{what} shape {v.shape} does not fit memory {self.weights.shape}")

    def _project(self, v: Tensor) -> Tensor:
        # sum_mu v[mu] W[mu, nu] as a row-vector product
        row = v.reshape(*v.shape[:-1], 1, self.size)
        return matmul(row, self.weights).reshape(v.shape)

    def write(self, e) -> "HebbRosenblattMemory":
        """Apply one Hebb-Rosenblatt update with an already-activated input ``e``."""
        if self.state is not MemoryState.UPDATE:
            raise MemoryStateError(f"write in {self.state.value} state")
        e = as_tensor(e)
        self._check_input(e, "write input")
        response = relu6(self._project(e) + self.theta * e)
        self.weights = self.weights + self.eta * outer(e, response) - self.delta * self.weights
        self.writes += 1
        return self

    def read(self, q) -> Tensor:
        """relu6(W^T q), without the theta term."""
        if self.state is MemoryState.UPDATE:
            raise MemoryStateError("read in update state; switch to intermediate or terminal first")
        q = as_tensor(q)
        self._check_input(q, "query")
        self.reads += 1
        return relu6(self._project(q))

    def to_intermediate(self) -> None:
        if self.state is MemoryState.TERMINAL:
            raise MemoryStateError("terminal memory cannot return to the glimpse sequence")
        self.state = MemoryState.INTERMEDIATE

    def to_update(self) -> None:
        if self.state is MemoryState.TERMINAL:
            raise MemoryStateError("terminal memory is fixed")
        self.state = MemoryState.UPDATE

    def to_terminal(self) -> None:
        self.state = MemoryState.TERMINAL

    def clamp_rates(self, margin: float = 1e-3) -> None:
        eta, delta, theta = clamp_rates(self.rates, margin).as_tuple()
        self.eta.data = np.array(eta)
        self.delta.data = np.array(delta)
        self.theta.data = np.array(theta)


def clamp_rates(rates: RateTriple, margin: float = 1e-3) -> RateTriple:
    """Project rates into eta > delta > 0, theta >= 0."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    delta = max(rates.delta, margin)
    eta = max(rates.eta, delta + margin)
    theta = max(rates.theta, 0.0)
    return RateTriple(eta, delta, theta)


def check_stability(rates: RateTriple, phi_in: float = RELU6_BOUND, phi_out: float = RELU6_BOUND,
                    n_glimpses: int | None = None) -> StabilityReport:
    """Check the monotone-iteration conditions and report the equilibrium bound.

    The bound is ``(eta / delta) * N**2 * phi_in**2 * phi_out`` and is only
    given when the conditions hold and ``n_glimpses`` is known.
    """
    if phi_in <= 0 or phi_out <= 0:
        raise ValueError("activation bounds must be positive")
    eta, delta, theta = rates.as_tuple()
    violations = []
    if not eta > delta:
        violations.append("eta <= delta")
    if not delta > 0:
        violations.append("delta <= 0")
    if eta < 0:
        violations.append("eta < 0")
    if theta < 0:
        violations.append("theta < 0")
    if violations:
        return StabilityReport(False, violations, None)
    bound = None
    if n_glimpses is not None:
        bound = (eta / delta) * n_glimpses ** 2 * phi_in ** 2 * phi_out
    return StabilityReport(True, [], bound)


def simulate_equilibrium(stimuli, rates: RateTriple, tolerance: float = 1e-12,
                         max_iterations: int = 10_000, phi_out=None) -> EquilibriumResult:
    """Fixed-point iteration of the memory's equilibrium responses.

    ``stimuli`` is an (S, M) array of first-layer responses. Starting from
    zero, each iteration sets, for every stimulus i and output unit nu,

        gamma[i, nu] = (eta/delta) * sum_n phi_out(theta*e[n, nu] + gamma[n, nu]) * m[n, i]

    with ``m`` the Gram matrix of the stimuli. Iteration stops when the largest
    change drops below ``tolerance`` or gamma passes the stability bound.
    """
    e = np.atleast_2d(np.asarray(stimuli, dtype=np.float64))
    report = check_stability(rates, n_glimpses=e.shape[0])
    if not report.satisfied:
        raise ValueError(f"rates outside the stability region: {', '.join(report.violations)}")
    if phi_out is None:
        phi_out = lambda x: np.clip(x, 0.0, RELU6_BOUND)  # noqa: E731
    eta, delta, theta = rates.as_tuple()
    gram = e @ e.T
    gamma = np.zeros_like(e)
    history = [gamma.copy()]
    for it in range(1, max_iterations + 1):
        new = (eta / delta) * gram.T @ phi_out(theta * e + gamma)
        change = np.max(np.abs(new - gamma)) if new.size else 0.0
        gamma = new
        history.append(gamma.copy())
        if report.bound is not None and np.any(gamma > report.bound):
            return EquilibriumResult(gamma, False, it, history, hit_bound=True)
        if change < tolerance:
            return EquilibriumResult(gamma, True, it, history)
    return EquilibriumResult(gamma, False, max_iterations, history)
