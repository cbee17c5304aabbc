"""Minimal reverse-mode differentiation over numpy arrays.

The tape is a DAG of ``Var`` nodes built by the op helpers below. Losses are
real scalars; complex intermediates carry cotangents in the convention

    g = dL/dRe(value) + 1j * dL/dIm(value)

so the vector-Jacobian product of any C-linear map is simply its adjoint,
and elementwise multiplication by a constant c pulls back as multiplication
by conj(c). Only nodes with ``track=True`` (parameters and anything built
from them) participate in the backward pass; constants are free.

The value of every op is computed by a plain-array kernel that is also used
directly by the inference path, so running the same network on the tape and
off it gives bitwise-identical numbers.
"""

import numpy as np

from .errors import NumericalFailureError


class Var:
    """One tape node: a value, its parents, and per-parent pullbacks."""

    __slots__ = ("value", "parents", "vjps", "track", "grad")

    def __init__(self, value, parents=(), vjps=(), track=None):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        if track is None:
            track = any(p.track for p in parents)
        self.track = track
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)


def wrap(value, track=False):
    """Lift a constant (track=False) or parameter leaf (track=True)."""
    if isinstance(value, Var):
        return value
    return Var(value, track=track)


def _toposort(root):
    # Iterative post-order over tracked nodes only.
    order = []
    seen = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.track:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node.parents:
            stack_.append((parent, False))
    return order


def backward(root, seed=1.0):
    """Accumulate gradients of the scalar ``root`` into tracked leaves."""
    if np.shape(root.value) != ():
        raise ValueError("backward expects a scalar root")
    order = _toposort(root)
    root.grad = seed
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.track:
                continue
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
        if node.parents:
            # Intermediates never need their gradient again.
            node.grad = None
    return root


def grad_of(leaf):
    """Gradient accumulated in a leaf, or zeros if the loss never saw it."""
    if leaf.grad is None:
        return np.zeros_like(leaf.value)
    return leaf.grad


# ---------------------------------------------------------------------------
# array ops (shapes must match exactly; no implicit broadcasting)

def add(a, b):
    return Var(a.value + b.value, (a, b), (lambda g: g, lambda g: g))


def sub(a, b):
    return Var(a.value - b.value, (a, b), (lambda g: g, lambda g: -g))


def neg(a):
    return Var(-a.value, (a,), (lambda g: -g,))


def scale(a, s):
    """Multiply an array node by a real scalar node (or plain float)."""
    s = wrap(s)
    sval = s.value
    return Var(
        a.value * sval,
        (a, s),
        (
            lambda g: g * sval,
            lambda g: np.vdot(g, a.value).real,
        ),
    )


def mul_const(a, c):
    """Elementwise multiply by a constant array; pullback uses conj(c)."""
    cc = np.conj(c)
    return Var(a.value * c, (a,), (lambda g: g * cc,))


def linop(a, fwd, adj):
    """Apply a C-linear operator with a known adjoint."""
    return Var(fwd(a.value), (a,), (adj,))


def inner_real(a, b):
    """Real part of <a, b> = sum(conj(a) * b); returns a real scalar node."""
    value = np.vdot(a.value, b.value).real
    return Var(value, (a, b), (lambda g: g * b.value, lambda g: g * a.value))


def norm_sq(a):
    value = np.vdot(a.value, a.value).real
    return Var(value, (a,), (lambda g: (2.0 * g) * a.value,))


def stack(vars_):
    """Stack equal-shape array nodes along a new leading axis."""
    vars_ = list(vars_)
    value = np.stack([v.value for v in vars_], axis=0)

    def make_vjp(i):
        return lambda g: g[i]

    return Var(value, tuple(vars_), tuple(make_vjp(i) for i in range(len(vars_))))


def index(a, i):
    """Select a[i] along the leading axis; pullback scatters into zeros."""

    def vjp(g):
        out = np.zeros_like(a.value)
        out[i] = g
        return out

    return Var(a.value[i], (a,), (vjp,))


# ---------------------------------------------------------------------------
# real scalar ops

def sadd(a, b):
    return Var(a.value + b.value, (a, b), (lambda g: g, lambda g: g))


def ssub(a, b):
    return Var(a.value - b.value, (a, b), (lambda g: g, lambda g: -g))


def smul(a, b):
    return Var(
        a.value * b.value, (a, b), (lambda g: g * b.value, lambda g: g * a.value)
    )


def sdiv(a, b):
    bv = b.value
    return Var(
        a.value / bv,
        (a, b),
        (lambda g: g / bv, lambda g: -g * a.value / (bv * bv)),
    )


def sexp(a):
    ev = np.exp(a.value)
    return Var(ev, (a,), (lambda g: g * ev,))


# ---------------------------------------------------------------------------
# real tensor kernels shared by the tape ops and the inference path

def leaky_relu_arrays(x, slope):
    return x * np.where(x > 0, 1.0, slope)


def _conv2d_cols(xp, kh, kw):
    # xp: (batch, cin, H + kh - 1, W + kw - 1), already padded.
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # (batch, cin, H, W, kh, kw) -> (batch, H, W, cin*kh*kw)
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        xp.shape[0], windows.shape[2], windows.shape[3], -1
    )


def conv2d_arrays(xv, wv, bv):
    """Same-padded stride-1 2-D convolution (cross-correlation).

    xv: (batch, cin, H, W); wv: (cout, cin, kh, kw); bv: (cout,). Kernel
    sides must be odd so the padding is symmetric.
    """
    cout, cin, kh, kw = wv.shape
    if kh % 2 != 1 or kw % 2 != 1:
        raise ValueError("conv2d needs odd kernel sides for same padding")
    if xv.shape[1] != cin:
        raise ValueError(f"input has {xv.shape[1]} channels, kernel expects {cin}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _conv2d_cols(xp, kh, kw)
    out = cols @ wv.reshape(cout, -1).T + bv
    return out.transpose(0, 3, 1, 2)


def pack_complex(v):
    """(M, B, H, W) complex -> (B, 2M, H, W) real, channels [Re..., Im...]."""
    return np.concatenate(
        [v.real.transpose(1, 0, 2, 3), v.imag.transpose(1, 0, 2, 3)], axis=1
    )


def unpack_complex(v):
    """(B, 2M, H, W) real -> (M, B, H, W) complex; inverse of pack_complex."""
    m = v.shape[1] // 2
    return v[:, :m].transpose(1, 0, 2, 3) + 1j * v[:, m:].transpose(1, 0, 2, 3)


# ---------------------------------------------------------------------------
# tape ops over those kernels

def leaky_relu(x, slope):
    factor = np.where(x.value > 0, 1.0, slope)
    return Var(x.value * factor, (x,), (lambda g: g * factor,))


def conv2d(x, w, b):
    """Tape version of :func:`conv2d_arrays`.

    The im2col matrix is not kept alive in the closures; the weight pullback
    rebuilds it from the saved input, trading a little backward time for a
    ninefold smaller live graph.
    """
    xv, wv, bv = x.value, w.value, b.value
    value = conv2d_arrays(xv, wv, bv)
    cout, cin, kh, kw = wv.shape
    ph, pw = kh // 2, kw // 2
    wmat = wv.reshape(cout, -1)

    def vjp_x(g):
        gx = np.zeros(
            (xv.shape[0], cin, xv.shape[2] + 2 * ph, xv.shape[3] + 2 * pw)
        )
        back = g.transpose(0, 2, 3, 1) @ wmat  # (batch, H, W, cin*kh*kw)
        back = back.reshape(g.shape[0], g.shape[2], g.shape[3], cin, kh, kw)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + g.shape[2], j:j + g.shape[3]] += back[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        return gx[:, :, ph:ph + xv.shape[2], pw:pw + xv.shape[3]]

    def vjp_w(g):
        xp = np.pad(x.value, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols = _conv2d_cols(xp, kh, kw)
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        return (gmat.T @ cols.reshape(-1, cols.shape[-1])).reshape(wv.shape)

    def vjp_b(g):
        return g.sum(axis=(0, 2, 3))

    return Var(value, (x, w, b), (vjp_x, vjp_w, vjp_b))


def complex_to_channels(x):
    m = x.value.shape[0]

    def vjp(g):
        return g[:, :m].transpose(1, 0, 2, 3) + 1j * g[:, m:].transpose(1, 0, 2, 3)

    return Var(pack_complex(x.value), (x,), (vjp,))


def channels_to_complex(y):
    if y.value.shape[1] % 2 != 0:
        raise ValueError("channel count must be even to unpack to complex")

    def vjp(g):
        return pack_complex(g)

    return Var(unpack_complex(y.value), (y,), (vjp,))


# ---------------------------------------------------------------------------
# conjugate gradients on the tape

def cg_var(apply_normal, lam, rhs, x0, iters):
    """Differentiable CG for (A^H A + lam*I) x = rhs, unrolled on the tape.

    ``apply_normal`` maps ndarray -> ndarray and must be self-adjoint; lam is
    a real scalar node. Arithmetic matches
    :func:`wavemodl.solvers.cg_solve_arrays` step for step so the on-tape and
    off-tape forwards agree bitwise.
    """

    def normal(v):
        return add(linop(v, apply_normal, apply_normal), scale(v, lam))

    x = x0
    r = sub(rhs, normal(x))
    p = r
    rs = inner_real(r, r)
    for k in range(iters):
        if not np.isfinite(rs.value):
            raise NumericalFailureError(
                f"non-finite residual at iteration {k}", iteration=k
            )
        if rs.value == 0.0:
            break
        ap = normal(p)
        denom = inner_real(p, ap)
        if not np.isfinite(denom.value):
            raise NumericalFailureError(
                f"non-finite curvature at iteration {k}", iteration=k
            )
        if denom.value <= 0.0:
            break
        alpha = sdiv(rs, denom)
        x = add(x, scale(p, alpha))
        r = sub(r, scale(ap, alpha))
        rs_new = inner_real(r, r)
        beta = sdiv(rs_new, rs)
        p = add(r, scale(p, beta))
        rs = rs_new
    return x
