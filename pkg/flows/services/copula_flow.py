"""
Copula transform f_c: (0, 1)^d -> R^d.

A logit layer followed by L affine coupling layers that alternate which half
of the coordinates passes through. Halves are taken over a fixed coordinate
order; the default interleaves even and odd positions so that neighbouring
columns (x1, x2), (x3, x4), ... always sit in opposite halves. Each coupling
computes

    y_T = x_T * exp(s) + t,      s = c_max * tanh(s_raw / c_max)

where s_raw and t come from conditioners on the passthrough half x_P and the
noise level sigma:

    s_raw(x_P, sigma) = sigmoid(s_w(sigma)) * s_x(x_P) + s_b(sigma)

(t likewise). s_x is a tanh MLP; s_w and s_b are affine maps of sigma.
The output layers of s_x and t_x and both sigma maps start at zero, so a fresh
flow is the identity after the logit.

The baseline mode (logit=False) drops the logit layer and works on
unconstrained inputs.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from cometflows.exceptions import DomainError, FlowNumericalError, ParameterError, ShapeError
from flows.services.nn_core import init_mlp, mlp_backward, mlp_forward
from marginals.services.marginal import EPS_U

logger = logging.getLogger(__name__)

DEFAULT_LAYERS = 10
DEFAULT_HIDDEN = (64, 64)
DEFAULT_SCALE_CLAMP = 5.0
DEFAULT_SIGMA_MAX = 0.3

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ============================================
# CONDITIONERS
# ============================================

@dataclass(frozen=True, eq=False)
class Conditioner:
    """sigmoid(gate(sigma)) * net(x_P) + offset(sigma)."""
    net: object         # MlpParams, passthrough half -> transformed width
    gate: object        # MlpParams, sigma -> transformed width (pre-sigmoid)
    offset: object      # MlpParams, sigma -> transformed width

    def parameters(self):
        return [self.net, self.gate, self.offset]


def init_conditioner(in_dim, out_dim, hidden, rng):
    return Conditioner(
        net=init_mlp([in_dim, *hidden, out_dim], rng, zero_last=True),
        gate=init_mlp([1, out_dim], rng, zero_last=True),
        offset=init_mlp([1, out_dim], rng, zero_last=True),
    )


def _conditioner_forward(cond, x_pass, context):
    hx, cache_x = mlp_forward(cond.net, x_pass)
    gate_raw, cache_g = mlp_forward(cond.gate, context)
    offset, cache_o = mlp_forward(cond.offset, context)
    gate = special.expit(gate_raw)
    return gate * hx + offset, (cache_x, cache_g, cache_o, hx, gate)


def _conditioner_backward(cond, cache, grad_out):
    cache_x, cache_g, cache_o, hx, gate = cache
    g_net, g_input = mlp_backward(cond.net, cache_x, grad_out * gate)
    g_gate, _ = mlp_backward(cond.gate, cache_g, grad_out * hx * gate * (1.0 - gate))
    g_offset, _ = mlp_backward(cond.offset, cache_o, grad_out)
    return [g_net, g_gate, g_offset], g_input


# ============================================
# COUPLING LAYER
# ============================================

def interleaved_order(d):
    """Even positions first, then odd: (0, 2, 4, ..., 1, 3, 5, ...)."""
    return tuple(range(0, d, 2)) + tuple(range(1, d, 2))


def _check_order(order, d):
    order = tuple(int(i) for i in order) if order else tuple(range(d))
    if sorted(order) != list(range(d)):
        raise ShapeError(f"coordinate order {order} is not a permutation of 0..{d - 1}")
    return order


@dataclass(frozen=True, eq=False)
class CouplingLayer:
    """
    With halves A = order[:k] and B = order[k:]:
    parity 0: A passes through, B is transformed.
    parity 1: B passes through, A is transformed.
    An empty order means the identity order.
    """
    d: int
    k: int
    parity: int
    scale: Conditioner
    shift: Conditioner
    scale_clamp: float = DEFAULT_SCALE_CLAMP
    index: int = 0
    order: tuple = ()

    def __post_init__(self):
        if not 1 <= self.k < self.d:
            raise ShapeError(f"split index k={self.k} invalid for d={self.d}")
        if self.parity not in (0, 1):
            raise ParameterError(f"parity must be 0 or 1, got {self.parity}")
        if not self.scale_clamp > 0:
            raise ParameterError(f"scale clamp must be positive, got {self.scale_clamp}")
        order = _check_order(self.order, self.d)
        object.__setattr__(self, 'order', order)
        first, second = np.array(order[:self.k]), np.array(order[self.k:])
        object.__setattr__(self, '_pass', first if self.parity == 0 else second)
        object.__setattr__(self, '_trans', second if self.parity == 0 else first)

        n_pass, n_trans = self._pass.size, self._trans.size
        for cond in (self.scale, self.shift):
            if cond.net.in_dim != n_pass or cond.net.out_dim != n_trans:
                raise ShapeError(
                    f"layer {self.index}: conditioner maps {cond.net.in_dim}->{cond.net.out_dim}, "
                    f"expected {n_pass}->{n_trans}"
                )
            if cond.gate.in_dim != 1 or cond.gate.out_dim != n_trans or cond.offset.out_dim != n_trans:
                raise ShapeError(f"layer {self.index}: context maps have the wrong width")

    @property
    def passthrough(self):
        return self._pass

    @property
    def transformed(self):
        return self._trans

    def parameters(self):
        return self.scale.parameters() + self.shift.parameters()

    def with_parameters(self, params):
        params = list(params)
        return CouplingLayer(
            d=self.d,
            k=self.k,
            parity=self.parity,
            scale=Conditioner(*params[0:3]),
            shift=Conditioner(*params[3:6]),
            scale_clamp=self.scale_clamp,
            index=self.index,
            order=self.order,
        )


def _as_batch(x, d):
    arr = np.asarray(x, dtype=float)
    batched = arr.ndim == 2
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ShapeError(f"expected vectors of length {d}, got shape {np.shape(x)}")
    return arr, batched


def _context(sigma, n):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = np.full(n, float(s))
    s = s.ravel()
    if s.shape != (n,):
        raise ShapeError(f"sigma must be a scalar or have one entry per row ({n}), got {np.shape(sigma)}")
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        raise DomainError("noise level sigma must be finite and nonnegative")
    return s[:, None]


def _scale_and_shift(layer, x_pass, context):
    raw_s, cache_s = _conditioner_forward(layer.scale, x_pass, context)
    t, cache_t = _conditioner_forward(layer.shift, x_pass, context)
    if not (np.all(np.isfinite(raw_s)) and np.all(np.isfinite(t))):
        raise FlowNumericalError(layer.index)
    s = layer.scale_clamp * np.tanh(raw_s / layer.scale_clamp)
    return s, t, cache_s, cache_t


def _coupling_pass(layer, x, context):
    s, t, cache_s, cache_t = _scale_and_shift(layer, x[:, layer.passthrough], context)
    y = x.copy()
    y[:, layer.transformed] = x[:, layer.transformed] * np.exp(s) + t
    return y, s.sum(axis=1), (x, s, cache_s, cache_t)


def _coupling_backward(layer, cache, grad_y, grad_logdet):
    x, s, cache_s, cache_t = cache
    trans, pas = layer.transformed, layer.passthrough
    g_trans = grad_y[:, trans]
    exp_s = np.exp(s)

    g_s = g_trans * x[:, trans] * exp_s + grad_logdet
    g_raw = g_s * (1.0 - (s / layer.scale_clamp) ** 2)
    scale_grads, g_pass_s = _conditioner_backward(layer.scale, cache_s, g_raw)
    shift_grads, g_pass_t = _conditioner_backward(layer.shift, cache_t, g_trans)

    grad_x = np.empty_like(grad_y)
    grad_x[:, trans] = g_trans * exp_s
    grad_x[:, pas] = grad_y[:, pas] + g_pass_s + g_pass_t
    return grad_x, scale_grads + shift_grads


def coupling_forward(layer, x, sigma):
    """Return (y, logdet); logdet sums s over the transformed coordinates."""
    arr, batched = _as_batch(x, layer.d)
    y, logdet, _ = _coupling_pass(layer, arr, _context(sigma, arr.shape[0]))
    return (y, logdet) if batched else (y[0], float(logdet[0]))


def coupling_inverse(layer, y, sigma):
    """Exact inverse of coupling_forward for the same sigma."""
    arr, batched = _as_batch(y, layer.d)
    context = _context(sigma, arr.shape[0])
    s, t, _, _ = _scale_and_shift(layer, arr[:, layer.passthrough], context)
    x = arr.copy()
    x[:, layer.transformed] = (arr[:, layer.transformed] - t) * np.exp(-s)
    return x if batched else x[0]


# ============================================
# LOGIT LAYER
# ============================================

def logit_forward(u, eps_u=EPS_U):
    """y = log(u / (1 - u)) after clamping to [eps_u, 1 - eps_u]; logdet sums -log u - log(1 - u)."""
    arr = np.clip(np.asarray(u, dtype=float), eps_u, 1.0 - eps_u)
    log_u = np.log(arr)
    log_1mu = np.log1p(-arr)
    y = log_u - log_1mu
    logdet = -(log_u + log_1mu).sum(axis=-1)
    return y, (float(logdet) if arr.ndim == 1 else logdet)


def sigmoid(y):
    return special.expit(np.asarray(y, dtype=float))


# ============================================
# FLOW
# ============================================

@dataclass(frozen=True, eq=False)
class CouplingFlow:
    d: int
    layers: tuple
    eps_u: float = EPS_U
    sigma_max: float = DEFAULT_SIGMA_MAX
    logit: bool = True

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 2:
            raise ParameterError(f"a coupling flow needs at least 2 layers, got {len(layers)}")
        for i, layer in enumerate(layers):
            if layer.d != self.d:
                raise ShapeError(f"layer {i} has dimension {layer.d}, flow has {self.d}")
            if layer.parity != i % 2:
                raise ParameterError("coupling layer parities must alternate starting at 0")
            if layer.order != layers[0].order:
                raise ParameterError("coupling layers must share one coordinate order")
        if self.sigma_max < 0:
            raise ParameterError(f"sigma_max must be nonnegative, got {self.sigma_max}")
        object.__setattr__(self, 'layers', layers)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def order(self):
        return self.layers[0].order

    @property
    def hidden(self):
        net = self.layers[0].scale.net
        return tuple(layer.out_dim for layer in net.layers[:-1])

    @property
    def scale_clamp(self):
        return self.layers[0].scale_clamp

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def with_parameters(self, params):
        params = list(params)
        per_layer = 6
        if len(params) != per_layer * len(self.layers):
            raise ShapeError("parameter list does not match the flow's layers")
        layers = tuple(
            layer.with_parameters(params[i * per_layer:(i + 1) * per_layer])
            for i, layer in enumerate(self.layers)
        )
        return CouplingFlow(self.d, layers, self.eps_u, self.sigma_max, self.logit)

    def is_finite(self):
        return all(p.is_finite() for p in self.parameters())


def init_flow(d, rng, n_layers=DEFAULT_LAYERS, hidden=DEFAULT_HIDDEN,
              scale_clamp=DEFAULT_SCALE_CLAMP, sigma_max=DEFAULT_SIGMA_MAX, logit=True, order=None):
    """
    Identity-initialized flow with k = floor(d / 2) and alternating parity.

    order defaults to interleaved_order(d).
    """
    if d < 2:
        raise ShapeError(f"coupling flows need d >= 2, got {d}")
    k = d // 2
    order = _check_order(interleaved_order(d) if order is None else order, d)
    layers = []
    for i in range(n_layers):
        parity = i % 2
        n_pass = k if parity == 0 else d - k
        n_trans = d - n_pass
        layers.append(CouplingLayer(
            d=d,
            k=k,
            parity=parity,
            scale=init_conditioner(n_pass, n_trans, hidden, rng),
            shift=init_conditioner(n_pass, n_trans, hidden, rng),
            scale_clamp=scale_clamp,
            index=i,
            order=order,
        ))
    return CouplingFlow(d=d, layers=tuple(layers), sigma_max=sigma_max, logit=logit)


def _forward_pass(flow, u, sigma, noise=None, keep_cache=False):
    """Shared forward sweep; returns (z, logdet_total, per-layer logdets, caches)."""
    n = u.shape[0]
    context = _context(sigma, n)
    if flow.logit:
        h, logdet = logit_forward(u, flow.eps_u)
    else:
        h, logdet = u.copy(), np.zeros(n)
    if noise is not None:
        h = h + context * noise

    per_layer, caches = [], []
    total = np.array(logdet, dtype=float)
    for layer in flow.layers:
        h, layer_logdet, cache = _coupling_pass(layer, h, context)
        per_layer.append(layer_logdet)
        total = total + layer_logdet
        if keep_cache:
            caches.append(cache)
    return h, total, per_layer, caches


def flow_forward(flow, u, sigma=0.0):
    """Return (z, logdet_total) including the logit layer's log-determinant."""
    arr, batched = _as_batch(u, flow.d)
    z, total, _, _ = _forward_pass(flow, arr, sigma)
    return (z, total) if batched else (z[0], float(total[0]))


def flow_layer_logdets(flow, u, sigma=0.0):
    """Per-stage log-determinants: [logit, layer 0, ..., layer L-1]."""
    arr, batched = _as_batch(u, flow.d)
    if flow.logit:
        _, base = logit_forward(arr, flow.eps_u)
    else:
        base = np.zeros(arr.shape[0])
    _, _, per_layer, _ = _forward_pass(flow, arr, sigma)
    stages = [np.asarray(base, dtype=float)] + per_layer
    return stages if batched else [float(s[0]) for s in stages]


def flow_inverse(flow, z, sigma=0.0):
    """Generative direction: inverse couplings in reverse order, then sigmoid."""
    arr, batched = _as_batch(z, flow.d)
    context = _context(sigma, arr.shape[0])
    h = arr
    for layer in reversed(flow.layers):
        s, t, _, _ = _scale_and_shift(layer, h[:, layer.passthrough], context)
        h = h.copy()
        h[:, layer.transformed] = (h[:, layer.transformed] - t) * np.exp(-s)
    if flow.logit:
        h = np.clip(sigmoid(h), flow.eps_u, 1.0 - flow.eps_u)
    return h if batched else h[0]


def standard_normal_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * (z * z).sum(axis=-1) - z.shape[-1] * _HALF_LOG_2PI


def flow_log_prob(flow, u, sigma=0.0):
    """log c(u | sigma) = log N(z; 0, I) + logdet_total."""
    arr, batched = _as_batch(u, flow.d)
    z, total, _, _ = _forward_pass(flow, arr, sigma)
    logp = standard_normal_logpdf(z) + total
    return logp if batched else float(logp[0])


def flow_sample(flow, n, sigma, rng):
    """Draw n points: z ~ N(0, I), inverse couplings, sigmoid."""
    if n < 1:
        raise DomainError(f"sample count must be at least 1, got {n}")
    z = rng.standard_normal((int(n), flow.d))
    return flow_inverse(flow, z, sigma)


def flow_grad(flow, u, sigma, noise=None):
    """
    Mean negative log-likelihood of a batch and its parameter gradients.

    noise, when given, is a standard-normal array shaped like u; the logit-space
    input is perturbed by sigma * noise. Gradients line up with flow.parameters().
    """
    arr, _ = _as_batch(u, flow.d)
    n = arr.shape[0]
    if n == 0:
        raise ShapeError("flow_grad needs a nonempty batch")
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != arr.shape:
            raise ShapeError(f"noise shape {noise.shape} does not match batch {arr.shape}")

    z, total, _, caches = _forward_pass(flow, arr, sigma, noise=noise, keep_cache=True)
    loss = -float(np.mean(standard_normal_logpdf(z) + total))

    grad = z / n
    grad_logdet = -1.0 / n
    grads = [None] * len(flow.layers)
    for i in range(len(flow.layers) - 1, -1, -1):
        grad, grads[i] = _coupling_backward(flow.layers[i], caches[i], grad, grad_logdet)
    return loss, [g for layer_grads in grads for g in layer_grads]
