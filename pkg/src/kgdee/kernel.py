"""Dense numeric substrate: activations, normalisation, losses, parameters,
optimisers and a central finite-difference gradient verifier.

Matrices and vectors are plain ``numpy.ndarray`` objects in float64.  Every
trainable module in the package derives its gradients by hand on top of the
forward/backward pairs defined here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, DomainError, GradientCheckError, NumericClampWarning

Matrix = np.ndarray

PROB_FLOOR = 1e-12


def as_matrix(data, rows=None, cols=None) -> Matrix:
    """Build a float64 matrix, optionally from a flat row-major sequence."""
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise DimensionError(f"{arr.size} values cannot fill a {rows}x{cols} matrix")
        arr = arr.reshape(rows, cols)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if not np.all(np.isfinite(arr)):
        raise DomainError("matrix entries must be finite")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def softmax(v) -> np.ndarray:
    """Softmax along the last axis, shifted by the maximum for stability."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise DomainError("softmax of an empty vector")
    shifted = v - v.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax along the last axis."""
    inner = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - inner)


def logsumexp(v, axis=-1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bce_with_logits(logits, targets):
    """Summed binary cross-entropy on raw logits; returns (loss, d loss / d logits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    # log(1 + exp(-|z|)) form avoids overflow on both tails
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.sum()), sigmoid(z) - y


def tanh_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (1.0 - out * out)


# --------------------------------------------------------------------------
# layer normalisation
# --------------------------------------------------------------------------


@dataclass
class LayerNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gain: np.ndarray


def layer_norm_forward(x, gain, bias, eps=1e-5):
    """Normalise the last axis of ``x`` to zero mean / unit variance, then apply gain and bias."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(
            f"layer norm over length {x.shape[-1]} got gain {gain.shape} and bias {bias.shape}"
        )
    if eps <= 0:
        raise DomainError("layer norm eps must be positive")
    mean = x.mean(axis=-1, keepdims=True)
    centred = x - mean
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    return xhat * gain + bias, LayerNormCache(xhat, inv_std, gain)


def layer_norm_backward(grad_out, cache: LayerNormCache):
    """Returns (d input, d gain, d bias); gain/bias gradients are summed over leading axes."""
    xhat = cache.xhat
    lead = tuple(range(grad_out.ndim - 1))
    dgain = (grad_out * xhat).sum(axis=lead) if lead else grad_out * xhat
    dbias = grad_out.sum(axis=lead) if lead else grad_out.copy()
    dxhat = grad_out * cache.gain
    dx = cache.inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def layer_norm(v, gain, bias, eps=1e-5) -> np.ndarray:
    return layer_norm_forward(v, gain, bias, eps)[0]


# --------------------------------------------------------------------------
# focal loss and class weights
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FocalLossConfig:
    """Modulating exponent ``lam`` and per-class weights ``alpha`` (must sum to one)."""

    lam: float = 2.0
    alpha: tuple = ()

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("focal loss modulating factor must be nonnegative")
        alpha = tuple(float(a) for a in self.alpha)
        if alpha:
            if any(a < 0.0 or a > 1.0 for a in alpha):
                raise DomainError("alpha entries must lie in [0, 1]")
            if abs(math.fsum(alpha) - 1.0) > 1e-9:
                raise DomainError(f"alpha must sum to 1, sums to {math.fsum(alpha)!r}")
        object.__setattr__(self, "alpha", alpha)

    def weight(self, target: int) -> float:
        return self.alpha[target] if self.alpha else 1.0


def focal_loss(probs, target: int, cfg: FocalLossConfig):
    """Focal loss on a softmax output and its gradient w.r.t. the pre-softmax logits.

    A zero target probability is clamped to ``PROB_FLOOR`` with a
    :class:`NumericClampWarning`.
    """
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < p.shape[0]:
        raise DomainError(f"target class {target} out of range for {p.shape[0]} classes")
    alpha = cfg.weight(target)
    lam = cfg.lam
    pt = float(p[target])
    if pt < PROB_FLOOR:
        warnings.warn(f"p_t={pt!r} clamped to {PROB_FLOOR}", NumericClampWarning, stacklevel=2)
        pt = PROB_FLOOR
    if pt >= 1.0:
        return 0.0, np.zeros_like(p)
    one_minus = 1.0 - pt
    log_pt = math.log(pt)
    loss = -alpha * one_minus**lam * log_pt
    # d loss / d p_t multiplied by p_t; the chain through softmax gives g * (onehot - p)
    mod_grad = lam * pt * one_minus ** (lam - 1.0) * log_pt if lam != 0.0 else 0.0
    g = -alpha * (one_minus**lam - mod_grad)
    grad = -g * p
    grad[target] += g
    return loss, grad


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """Per-class weights: softmax of total/count, so rarer classes weigh more."""
    n = np.asarray(counts, dtype=np.float64)
    if n.size == 0:
        raise DomainError("class_weights needs at least one class")
    if np.any(n < 1):
        raise DomainError("every class count must be at least 1")
    return softmax(n.sum() / n)


# --------------------------------------------------------------------------
# parameters and optimisation
# --------------------------------------------------------------------------


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise DimensionError(f"gradient shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad.fill(0.0)


class ParamSet:
    """Ordered collection of named parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self._params[p.name] = p

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def v(self, name: str) -> np.ndarray:
        return self._params[name].value

    def g(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def merged(self, other: "ParamSet") -> "ParamSet":
        return ParamSet([*self, *other])

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, value in state.items():
            p = self._params[name]
            if p.value.shape != value.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != {p.value.shape}")
            p.value[...] = value

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.value)) for p in self._params.values())


class SGD:
    """Plain gradient descent with a constant step size."""

    def __init__(self, params: ParamSet, lr: float):
        self.params = params
        self.lr = lr

    def step(self):
        for p in self.params:
            p.value -= self.lr * p.grad


class Adam:
    def __init__(self, params: ParamSet, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip = clip
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.s = {p.name: np.zeros_like(p.value) for p in params}

    def step(self):
        self.t += 1
        scale = 1.0
        if self.clip is not None:
            norm = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params))
            if norm > self.clip:
                scale = self.clip / norm
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad * scale
            m = self.m[p.name]
            s = self.s[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            s *= self.beta2
            s += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(s / c2) + self.eps)


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    checked_entries: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.max_rel_error.items()]
        lines.append(f"worst {self.worst:.3e} ({'ok' if self.passed else 'FAIL'} at tol {self.tol:g})")
        return "\n".join(lines)


def finite_diff_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn(params)`` must return the loss and accumulate analytic
    gradients into ``params``.  The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``; ``max_entries`` caps the number of
    entries probed per parameter (sampled with ``rng``).
    """
    if not 0.0 < h <= 1e-3:
        raise ValueError("finite difference step must lie in (0, 1e-3]")
    params.zero_grad()
    loss_fn(params)
    analytic = {p.name: p.grad.copy() for p in params}
    report = GradCheckReport(tol=tol)
    rng = rng or np.random.default_rng(0)
    for p in params:
        a_grad = analytic[p.name]
        if not np.all(np.isfinite(a_grad)):
            raise GradientCheckError(f"analytic gradient of {p.name} is not finite")
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn(params)
            flat[i] = orig - h
            f_minus = loss_fn(params)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not math.isfinite(numeric):
                raise GradientCheckError(f"numeric gradient of {p.name}[{i}] is not finite")
            a = float(a_grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report.max_rel_error[p.name] = worst
        report.checked_entries += len(idx)
    params.zero_grad()
    return report
