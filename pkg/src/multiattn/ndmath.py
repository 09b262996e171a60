"""Dense float64 kernels, nonlinearities, seeded initialization and gradient checking.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every helper
here checks shapes explicitly instead of relying on broadcasting.
"""
from __future__ import annotations

import zlib
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def as_tensor(values, shape=None) -> np.ndarray:
    t = np.array(values, dtype=DTYPE)
    if shape is not None:
        t = t.reshape(shape)
    return t


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream for component ``name`` under a root seed.

    Streams for different names do not perturb each other, so a component
    can be switched off without changing what the others draw.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {m.shape} by {v.shape}")
    return m @ v


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split form: exp only ever sees non-positive arguments
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    e = np.exp(x - x.max())
    return e / e.sum()


_UNARY = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}
_BINARY = {"mul": np.multiply, "add": np.add, "sub": np.subtract}


def elemwise(op: str, *args: np.ndarray) -> np.ndarray:
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one operand")
        return _UNARY[op](np.asarray(args[0], dtype=DTYPE))
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two operands")
        a, b = (np.asarray(x, dtype=DTYPE) for x in args)
        if a.shape != b.shape:
            raise ShapeError(f"{op}: operand shapes differ {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def init(shape, scheme: str, rng: np.random.Generator | None = None, a: float = -0.05, b: float = 0.05) -> np.ndarray:
    """Initialize a tensor with ``zeros``, ``uniform`` on [a, b] or ``glorot``.

    Glorot uses fan_out = shape[0], fan_in = product of the remaining dims.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if scheme == "zeros":
        return np.zeros(shape, dtype=DTYPE)
    if rng is None:
        raise ValueError(f"{scheme} init needs an rng")
    if scheme == "uniform":
        if not a < b:
            raise ValueError(f"uniform init needs a < b, got {a}, {b}")
        return rng.uniform(a, b, size=shape).astype(DTYPE)
    if scheme == "glorot":
        fan_out = shape[0]
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape).astype(DTYPE)
    raise ValueError(f"unknown init scheme {scheme!r}")


def grad_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic_grads: Mapping[str, np.ndarray],
    eps: float = 1e-4,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is re-evaluated after perturbing each entry of ``params`` in place,
    so it must read the same arrays.  Entries are restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    worst = 0.0
    for name, p in params.items():
        g = analytic_grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError(f"parameter {name} is not contiguous")
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective perturbing {name}[{i}]")
            num = (fp - fm) / (2.0 * eps)
            ana = gflat[i]
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
