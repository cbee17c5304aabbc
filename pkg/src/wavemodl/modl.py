"""Unrolled alternating reconstruction with learned dual-domain denoisers.

The reconstruction alternates a data-consistency solve per contrast,

    x = argmin sum_m ||A_m x_m - b_m||^2
             + lambda1 ||x - eta||^2 + lambda2 ||x - zeta||^2,

with prior estimates eta (from a k-space domain conv net) and zeta (from an
image domain conv net). Both nets see all contrasts jointly as real channel
pairs, share their weights across the outer iterations, and are trained by
plain gradient descent through the entire unrolled graph, conjugate-gradient
iterations included.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, NumericalFailureError
from .validation import check_nonnegative, check_positive, check_positive_int
from .volume import MultiCoilData, fft_centered_array
from .wave import WaveOperator, wave_adjoint_arrays

DEFAULT_HIDDEN_CHANNELS = 24
DEFAULT_HIDDEN_LAYERS = 5
DEFAULT_KERNEL_SIZE = 3
DEFAULT_LEAKY_SLOPE = 0.1
DEFAULT_LAMBDA_INIT = 0.05


@dataclass(frozen=True)
class ConvLayer:
    """One convolution: weights (cout, cin, k, k) and bias (cout,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if w.ndim != 4 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise InvalidInputError("conv layer needs 4-D weights and a matching bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_params(self):
        return self.weights.size + self.bias.size


@dataclass(frozen=True)
class ConvNetParams:
    """A stack of same-padded conv layers with leaky-ReLU activations between."""

    layers: tuple
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInputError("a conv net needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise InvalidInputError("conv layer channel counts do not chain")
        check_positive(self.leaky_slope, "leaky_slope")
        object.__setattr__(self, "layers", layers)

    @property
    def in_channels(self):
        return self.layers[0].weights.shape[1]

    @property
    def out_channels(self):
        return self.layers[-1].weights.shape[0]

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)


@dataclass(frozen=True)
class ModlParams:
    """All learnable state: two denoiser nets and two log-space weights."""

    d_image: ConvNetParams
    d_kspace: ConvNetParams
    lambda1_raw: float
    lambda2_raw: float
    n_outer: int = 10

    def __post_init__(self):
        check_positive_int(self.n_outer, "n_outer")
        for name, net in (("d_image", self.d_image), ("d_kspace", self.d_kspace)):
            if net.in_channels != net.out_channels:
                raise InvalidInputError(f"{name} must preserve its channel count")
            if net.in_channels % 2 != 0:
                raise InvalidInputError(f"{name} channel count must be even")
        if self.d_image.in_channels != self.d_kspace.in_channels:
            raise InvalidInputError("both denoisers must accept the same contrasts")

    @property
    def n_contrasts(self):
        return self.d_image.in_channels // 2

    @property
    def lambda1(self):
        return float(np.exp(self.lambda1_raw))

    @property
    def lambda2(self):
        return float(np.exp(self.lambda2_raw))

    @property
    def n_params(self):
        return self.d_image.n_params + self.d_kspace.n_params + 2


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent settings for the unrolled reconstruction."""

    learning_rate: float = 1e-2
    steps: int = 200
    slab_size: int = 8
    seed: int = 0
    contrast_weights: tuple = None
    cg_iters: int = 10

    def __post_init__(self):
        check_positive(self.learning_rate, "learning_rate")
        check_positive_int(self.steps, "steps")
        check_positive_int(self.slab_size, "slab_size")
        check_positive_int(self.cg_iters, "cg_iters")
        if self.contrast_weights is not None:
            w = tuple(float(v) for v in self.contrast_weights)
            if any(not v > 0 for v in w):
                raise InvalidInputError("contrast_weights must be positive")
            object.__setattr__(self, "contrast_weights", w)


@dataclass(frozen=True)
class TrainSample:
    """One training example: per-contrast k-space, operators, and the truth."""

    data: tuple
    ops: tuple
    target: np.ndarray

    def __post_init__(self):
        data = tuple(
            d.data if isinstance(d, MultiCoilData) else np.asarray(d, dtype=np.complex128)
            for d in self.data
        )
        ops = tuple(self.ops)
        target = np.asarray(self.target, dtype=np.complex128)
        if target.ndim != 4 or len(data) != target.shape[0] or len(ops) != len(data):
            raise InvalidInputError(
                "sample needs matching contrast counts across data, ops and target"
            )
        for op, d in zip(ops, data):
            if not isinstance(op, WaveOperator):
                raise InvalidInputError("ops must be WaveOperator instances")
            if d.shape != op.data_shape or op.shape != target.shape[1:]:
                raise InvalidInputError("sample shapes do not match their operators")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "target", target)

    @property
    def n_contrasts(self):
        return self.target.shape[0]


def init_conv_net(n_contrasts, hidden_channels=DEFAULT_HIDDEN_CHANNELS,
                  hidden_layers=DEFAULT_HIDDEN_LAYERS, kernel_size=DEFAULT_KERNEL_SIZE,
                  init_scale=1e-2, leaky_slope=DEFAULT_LEAKY_SLOPE, rng=None):
    """Fresh denoiser weights: small uniform hidden layers, zero final layer.

    Zeroing the last layer makes the net output exactly zero at start, so an
    untrained unrolled model reduces to the plain regularized solve, while
    the uniform hidden layers keep nonzero gradients flowing from step one.
    """
    check_positive_int(n_contrasts, "n_contrasts")
    check_positive_int(hidden_channels, "hidden_channels")
    check_positive_int(hidden_layers, "hidden_layers")
    if kernel_size % 2 != 1:
        raise InvalidInputError(f"kernel_size must be odd, got {kernel_size}")
    rng = np.random.default_rng(rng)
    io_channels = 2 * n_contrasts
    widths = [io_channels] + [hidden_channels] * hidden_layers + [io_channels]
    layers = []
    for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        shape = (cout, cin, kernel_size, kernel_size)
        if i == len(widths) - 2:
            w = np.zeros(shape)
        else:
            w = rng.uniform(-init_scale, init_scale, size=shape)
        layers.append(ConvLayer(w, np.zeros(cout)))
    return ConvNetParams(tuple(layers), leaky_slope)


def init_modl_params(n_contrasts, seed=0, n_outer=10,
                     hidden_channels=DEFAULT_HIDDEN_CHANNELS,
                     hidden_layers=DEFAULT_HIDDEN_LAYERS,
                     kernel_size=DEFAULT_KERNEL_SIZE,
                     lambda_init=DEFAULT_LAMBDA_INIT,
                     leaky_slope=DEFAULT_LEAKY_SLOPE):
    check_positive(lambda_init, "lambda_init")
    nets = []
    for idx in range(2):
        nets.append(
            init_conv_net(
                n_contrasts, hidden_channels, hidden_layers, kernel_size,
                leaky_slope=leaky_slope,
                rng=np.random.default_rng([int(seed), idx]),
            )
        )
    raw = float(np.log(lambda_init))
    return ModlParams(nets[0], nets[1], raw, raw, n_outer)


# ---------------------------------------------------------------------------
# plain-array forward (inference)

def _fft3(v):
    return fft_centered_array(v, (1, 2, 3), "forward")


def _ifft3(v):
    return fft_centered_array(v, (1, 2, 3), "inverse")


def conv_net_apply(net, x):
    """Run the conv stack on (batch, channels, H, W) real arrays."""
    if x.shape[1] != net.in_channels:
        raise InvalidInputError(
            f"input has {x.shape[1]} channels, net expects {net.in_channels}"
        )
    h = x
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        h = ad.conv2d_arrays(h, layer.weights, layer.bias)
        if i < last:
            h = ad.leaky_relu_arrays(h, net.leaky_slope)
    return h


def denoise(params, stack_arr, domain):
    """Apply one denoiser to a contrast stack (M, nx, ny, nz).

    The image-domain net filters (y, z) slices directly; the k-space net
    filters the centered spectrum and returns to image space.
    """
    if domain not in ("image", "kspace"):
        raise InvalidInputError(f"domain must be image or kspace, got {domain!r}")
    if domain == "image":
        return ad.unpack_complex(conv_net_apply(params.d_image, ad.pack_complex(stack_arr)))
    k = _fft3(stack_arr)
    kd = ad.unpack_complex(conv_net_apply(params.d_kspace, ad.pack_complex(k)))
    return _ifft3(kd)


def _adjoint_rhs(data, ops):
    out = []
    for d, op in zip(data, ops):
        b = d.data if isinstance(d, MultiCoilData) else np.asarray(d, dtype=np.complex128)
        if b.shape != op.data_shape:
            raise InvalidInputError(
                f"data shape {b.shape} does not match operator {op.data_shape}"
            )
        out.append(wave_adjoint_arrays(b, op.sens.maps, op.psf.table, op.mask))
    return out


def modl_reconstruct(params, data, ops, cg_iters=10):
    """Unrolled reconstruction on plain arrays.

    Parameters
    ----------
    params : ModlParams
    data : sequence of MultiCoilData or ndarray
        Acquired k-space per contrast.
    ops : sequence of WaveOperator
    cg_iters : int
        Conjugate-gradient iterations per data-consistency solve.

    Returns
    -------
    ndarray of shape (n_contrasts, nx, ny, nz)
    """
    from .solvers import cg_solve_arrays

    m = params.n_contrasts
    if len(data) != m or len(ops) != m:
        raise InvalidInputError(
            f"model expects {m} contrasts, got {len(data)} data / {len(ops)} ops"
        )
    lam1 = params.lambda1
    lam2 = params.lambda2
    lam = lam1 + lam2
    ahb = _adjoint_rhs(data, ops)
    xs = [
        cg_solve_arrays(ops[i].normal, ahb[i], lam, cg_iters, 0.0, None)[0]
        for i in range(m)
    ]
    for _ in range(params.n_outer):
        st = np.stack(xs, axis=0)
        eta = denoise(params, st, "kspace")
        zeta = denoise(params, st, "image")
        for i in range(m):
            rhs = ahb[i] + eta[i] * lam1 + zeta[i] * lam2
            xs[i] = cg_solve_arrays(ops[i].normal, rhs, lam, cg_iters, 0.0, xs[i])[0]
    return np.stack(xs, axis=0)


# ---------------------------------------------------------------------------
# tape forward (training)

class _ParamVars:
    """Leaf Vars mirroring a ModlParams, in a fixed flattening order."""

    def __init__(self, params, track=True):
        self.image_layers = [
            (ad.wrap(l.weights, track), ad.wrap(l.bias, track))
            for l in params.d_image.layers
        ]
        self.kspace_layers = [
            (ad.wrap(l.weights, track), ad.wrap(l.bias, track))
            for l in params.d_kspace.layers
        ]
        self.l1_raw = ad.wrap(params.lambda1_raw, track)
        self.l2_raw = ad.wrap(params.lambda2_raw, track)
        self.slope_image = params.d_image.leaky_slope
        self.slope_kspace = params.d_kspace.leaky_slope
        self.n_outer = params.n_outer

    def leaves(self):
        for w, b in self.image_layers + self.kspace_layers:
            yield w
            yield b
        yield self.l1_raw
        yield self.l2_raw

    def rebuild(self, params, updater):
        """New ModlParams with each leaf array mapped through ``updater``."""
        def net(layer_vars, old):
            return ConvNetParams(
                tuple(
                    ConvLayer(updater(w), updater(b)) for w, b in layer_vars
                ),
                old.leaky_slope,
            )

        return ModlParams(
            net(self.image_layers, params.d_image),
            net(self.kspace_layers, params.d_kspace),
            float(updater(self.l1_raw)),
            float(updater(self.l2_raw)),
            params.n_outer,
        )


def _apply_net_var(layer_vars, slope, x):
    h = x
    last = len(layer_vars) - 1
    for i, (w, b) in enumerate(layer_vars):
        h = ad.conv2d(h, w, b)
        if i < last:
            h = ad.leaky_relu(h, slope)
    return h


def _denoise_var(pv, x, domain):
    if domain == "image":
        ch = ad.complex_to_channels(x)
        out = _apply_net_var(pv.image_layers, pv.slope_image, ch)
        return ad.channels_to_complex(out)
    k = ad.linop(x, _fft3, _ifft3)
    ch = ad.complex_to_channels(k)
    out = _apply_net_var(pv.kspace_layers, pv.slope_kspace, ch)
    kd = ad.channels_to_complex(out)
    return ad.linop(kd, _ifft3, _fft3)


def _unrolled_forward_var(pv, sample, cg_iters):
    lam1 = ad.sexp(pv.l1_raw)
    lam2 = ad.sexp(pv.l2_raw)
    lam = ad.sadd(lam1, lam2)
    ahb = _adjoint_rhs(sample.data, sample.ops)
    xs = [
        ad.cg_var(
            sample.ops[i].normal, lam, ad.wrap(ahb[i]),
            ad.wrap(np.zeros_like(ahb[i])), cg_iters,
        )
        for i in range(sample.n_contrasts)
    ]
    for _ in range(pv.n_outer):
        st = ad.stack(xs)
        eta = _denoise_var(pv, st, "kspace")
        zeta = _denoise_var(pv, st, "image")
        for i in range(sample.n_contrasts):
            rhs = ad.add(
                ad.add(ad.wrap(ahb[i]), ad.scale(ad.index(eta, i), lam1)),
                ad.scale(ad.index(zeta, i), lam2),
            )
            xs[i] = ad.cg_var(sample.ops[i].normal, lam, rhs, xs[i], cg_iters)
    return ad.stack(xs)


def _contrast_weights(cfg, n_contrasts):
    if cfg.contrast_weights is None:
        return np.ones(n_contrasts)
    w = np.asarray(cfg.contrast_weights, dtype=np.float64)
    if w.shape != (n_contrasts,):
        raise InvalidInputError(
            f"contrast_weights must have length {n_contrasts}, got {w.shape}"
        )
    return w


def _sample_loss_var(x_stack, target, weights):
    num = None
    den = 0.0
    for m in range(target.shape[0]):
        diff = ad.sub(ad.index(x_stack, m), ad.wrap(target[m]))
        term = ad.smul(ad.wrap(weights[m]), ad.norm_sq(diff))
        num = term if num is None else ad.sadd(num, term)
        den += weights[m] * np.vdot(target[m], target[m]).real
    if den <= 0.0:
        raise InvalidInputError("training target has zero norm")
    return ad.smul(num, ad.wrap(1.0 / den))


def training_loss(params, batch, cfg):
    """Forward-only weighted relative squared error over a batch."""
    value, _ = _loss_graph(params, batch, cfg, track=False)
    return float(value.value)


def _loss_graph(params, batch, cfg, track=True):
    if not batch:
        raise InvalidInputError("batch must contain at least one sample")
    pv = _ParamVars(params, track=track)
    weights = _contrast_weights(cfg, params.n_contrasts)
    total = None
    for sample in batch:
        if sample.n_contrasts != params.n_contrasts:
            raise InvalidInputError(
                f"sample has {sample.n_contrasts} contrasts, model expects "
                f"{params.n_contrasts}"
            )
        x = _unrolled_forward_var(pv, sample, cfg.cg_iters)
        loss = _sample_loss_var(x, sample.target, weights)
        total = loss if total is None else ad.sadd(total, loss)
    mean = ad.smul(total, ad.wrap(1.0 / len(batch)))
    return mean, pv


def _backward_loss(params, batch, cfg):
    loss, pv = _loss_graph(params, batch, cfg, track=True)
    if not np.isfinite(loss.value):
        raise NumericalFailureError("non-finite training loss", iteration=None)
    ad.backward(loss)
    grads = [np.asarray(ad.grad_of(leaf)) for leaf in pv.leaves()]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError("non-finite gradient", iteration=None)
    return float(loss.value), grads, pv


def loss_and_grads(params, batch, cfg):
    """Batch loss and its gradient with respect to every parameter.

    Returns (loss, grads) with grads ordered like the parameter flattening:
    image net (weights, bias per layer), k-space net, then the raw lambdas.
    """
    loss, grads, _ = _backward_loss(params, batch, cfg)
    return loss, grads


def grads_to_vector(grads):
    """Flatten a loss_and_grads gradient list like params_to_vector."""
    return np.concatenate([np.ravel(np.asarray(g, dtype=np.float64)) for g in grads])


def train_step(params, batch, cfg):
    """One full-batch gradient-descent update. Returns (new_params, loss)."""
    loss, grads, pv = _backward_loss(params, batch, cfg)
    grad_map = {id(leaf): g for leaf, g in zip(pv.leaves(), grads)}
    lr = cfg.learning_rate

    def updater(leaf):
        return leaf.value - lr * grad_map[id(leaf)]

    return pv.rebuild(params, updater), loss


def train(params, batch, cfg):
    """Run cfg.steps deterministic gradient-descent steps on a fixed batch."""
    history = []
    for _ in range(cfg.steps):
        params, loss = train_step(params, batch, cfg)
        history.append(loss)
    return params, history


def params_to_vector(params):
    """Flatten every learnable array (leaves order) into one float vector."""
    pv = _ParamVars(params, track=False)
    parts = [np.ravel(np.asarray(leaf.value, dtype=np.float64)) for leaf in pv.leaves()]
    return np.concatenate(parts)


def params_from_vector(params, vec):
    """Inverse of :func:`params_to_vector`, keeping the layout of ``params``."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != params.n_params:
        raise InvalidInputError(
            f"vector has {vec.size} entries, model needs {params.n_params}"
        )
    pv = _ParamVars(params, track=False)
    offset = 0
    values = {}
    for leaf in pv.leaves():
        size = int(np.size(leaf.value))
        chunk = vec[offset:offset + size]
        values[id(leaf)] = (
            float(chunk[0]) if np.shape(leaf.value) == ()
            else chunk.reshape(np.shape(leaf.value))
        )
        offset += size

    return pv.rebuild(params, lambda leaf: values[id(leaf)])
