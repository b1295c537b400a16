# vim: set fileencoding=utf-8 :

"""PMPTrain layer dynamics: transition maps, terminal losses, regularizer and
their closed-form derivatives.

States are 2-D float64 arrays (samples x dim). Convolutional layers view each
row as a (channels, height, width) image in C order.
"""

# Standard library
from __future__ import absolute_import, division, print_function
import logging

# Third-party
import numpy as np

# Local/library specific
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)

RESIDUAL_DENSE = "residual_dense"
RESIDUAL_CONV2D = "residual_conv2d"
PROJECTION = "projection"
CLASSIFIER = "classifier"
LAYER_KINDS = (RESIDUAL_DENSE, RESIDUAL_CONV2D, PROJECTION, CLASSIFIER)
RESIDUAL_KINDS = (RESIDUAL_DENSE, RESIDUAL_CONV2D)

TANH = "tanh"
IDENTITY = "identity"
ACTIVATIONS = (TANH, IDENTITY)

SUM_SQUARED = "sum_squared_scalar_target"
CROSS_ENTROPY = "softmax_cross_entropy"
LOSS_KINDS = (SUM_SQUARED, CROSS_ENTROPY)

DTYPE = np.float64


class ConvShape(object):
    """Convolution metadata: 3x3 (odd) kernel, stride 1, zero padding that
    preserves the spatial size, optional 2x2 max-pool after the activation.
    """

    def __init__(self, in_channels, out_channels, height, width, kernel=3,
                 pool=False):
        for name, value in (("in_channels", in_channels),
                            ("out_channels", out_channels),
                            ("height", height), ("width", width),
                            ("kernel", kernel)):
            if int(value) != value or value < 1:
                raise pmp_utils.RejectedInputError(
                    "{0} must be a positive integer, got {1}"
                    .format(name, value))
        if kernel % 2 != 1:
            raise pmp_utils.RejectedInputError(
                "kernel must be odd to preserve spatial size, got {0}"
                .format(kernel))
        if pool and (height % 2 or width % 2):
            raise pmp_utils.RejectedInputError(
                "2x2 max-pool needs even height and width, got {0}x{1}"
                .format(height, width))
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.height = int(height)
        self.width = int(width)
        self.kernel = int(kernel)
        self.pool = bool(pool)

    @property
    def out_height(self):
        return self.height // 2 if self.pool else self.height

    @property
    def out_width(self):
        return self.width // 2 if self.pool else self.width

    @property
    def in_dim(self):
        return self.in_channels * self.height * self.width

    @property
    def out_dim(self):
        return self.out_channels * self.out_height * self.out_width

    def to_dict(self):
        return {"in_channels": self.in_channels,
                "out_channels": self.out_channels,
                "height": self.height, "width": self.width,
                "kernel": self.kernel, "pool": self.pool}


class LayerSpec(object):
    """One layer of the network.

    kind: residual_dense | residual_conv2d | projection | classifier.
    A projection with conv metadata is conv -> activation -> optional 2x2
    max-pool; without it, a dense tanh(W x + b) map. The classifier is an
    affine map producing logits.
    """

    def __init__(self, kind, in_dim, out_dim, delta=1.0, activation=None,
                 conv=None):
        if kind not in LAYER_KINDS:
            raise pmp_utils.RejectedInputError(
                "unknown layer kind: {0}".format(kind))
        if int(in_dim) != in_dim or int(out_dim) != out_dim or \
                in_dim < 1 or out_dim < 1:
            raise pmp_utils.RejectedInputError(
                "layer dims must be positive integers, got {0} -> {1}"
                .format(in_dim, out_dim))
        if activation is None:
            activation = IDENTITY if kind == CLASSIFIER else TANH
        if activation not in ACTIVATIONS:
            raise pmp_utils.RejectedInputError(
                "unknown activation: {0}".format(activation))
        if kind == CLASSIFIER and activation != IDENTITY:
            raise pmp_utils.RejectedInputError(
                "classifier layers produce affine logits (identity)")
        if kind in RESIDUAL_KINDS:
            if in_dim != out_dim:
                raise pmp_utils.RejectedInputError(
                    "residual layer needs in_dim == out_dim, got {0} -> {1}"
                    .format(in_dim, out_dim))
            if not delta > 0:
                raise pmp_utils.RejectedInputError(
                    "residual layer needs delta > 0, got {0}".format(delta))
        if kind == RESIDUAL_CONV2D and conv is None:
            raise pmp_utils.RejectedInputError(
                "residual_conv2d layers need conv metadata")
        if conv is not None:
            if kind not in (RESIDUAL_CONV2D, PROJECTION):
                raise pmp_utils.RejectedInputError(
                    "conv metadata given for {0} layer".format(kind))
            if conv.in_dim != in_dim or conv.out_dim != out_dim:
                raise pmp_utils.RejectedInputError(
                    "conv metadata implies {0} -> {1}, layer says {2} -> {3}"
                    .format(conv.in_dim, conv.out_dim, in_dim, out_dim))
            if kind == RESIDUAL_CONV2D and (
                    conv.pool or conv.in_channels != conv.out_channels):
                raise pmp_utils.RejectedInputError(
                    "residual conv layers keep channels and do not pool")
        self.kind = kind
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.delta = float(delta)
        self.activation = activation
        self.conv = conv

    @property
    def is_residual(self):
        return self.kind in RESIDUAL_KINDS

    @property
    def is_conv(self):
        return self.conv is not None

    @property
    def step(self):
        """Step size entering the dynamics; 1 for non-residual layers.
        """
        return self.delta if self.is_residual else 1.0

    @property
    def weight_shape(self):
        if self.is_conv:
            c = self.conv
            return (c.out_channels, c.in_channels, c.kernel, c.kernel)
        return (self.out_dim, self.in_dim)

    @property
    def bias_size(self):
        return self.conv.out_channels if self.is_conv else self.out_dim

    @property
    def num_params(self):
        return int(np.prod(self.weight_shape)) + self.bias_size

    def split(self, theta):
        """Return (weights, biases) views of the flat parameter vector.
        """
        theta = np.asarray(theta, dtype=DTYPE)
        if theta.ndim != 1 or theta.size != self.num_params:
            raise pmp_utils.RejectedInputError(
                "{0} layer expects {1} parameters, got shape {2}"
                .format(self.kind, self.num_params, theta.shape))
        n_w = self.num_params - self.bias_size
        return theta[:n_w].reshape(self.weight_shape), theta[n_w:]

    def to_dict(self):
        doc = {"kind": self.kind, "in_dim": self.in_dim,
               "out_dim": self.out_dim, "delta": self.delta,
               "activation": self.activation}
        if self.conv is not None:
            doc["conv"] = self.conv.to_dict()
        return doc

    def __repr__(self):
        return "LayerSpec({0}, {1}->{2}, delta={3})".format(
            self.kind, self.in_dim, self.out_dim, self.delta)


class NetworkSpec(object):
    """Ordered layers, terminal loss kind and regularizer weight.
    """

    def __init__(self, layers, loss_kind, regularizer_weight=0.0):
        layers = list(layers)
        if not layers:
            raise pmp_utils.RejectedInputError("network needs a layer")
        if loss_kind not in LOSS_KINDS:
            raise pmp_utils.RejectedInputError(
                "unknown loss kind: {0}".format(loss_kind))
        if regularizer_weight < 0:
            raise pmp_utils.RejectedInputError(
                "regularizer weight must be >= 0, got {0}"
                .format(regularizer_weight))
        for n in range(1, len(layers)):
            if layers[n - 1].out_dim != layers[n].in_dim:
                raise pmp_utils.RejectedInputError(
                    "layer {0} outputs {1} but layer {2} expects {3}"
                    .format(n - 1, layers[n - 1].out_dim, n,
                            layers[n].in_dim))
        self.layers = layers
        self.loss_kind = loss_kind
        self.regularizer_weight = float(regularizer_weight)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, n):
        return self.layers[n]

    def __iter__(self):
        return iter(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def num_params(self):
        return sum(layer.num_params for layer in self.layers)

    def to_dict(self):
        return {"loss_kind": self.loss_kind,
                "regularizer_weight": self.regularizer_weight,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, doc):
        """Inverse of to_dict.
        """
        try:
            layers = list()
            for layer in doc["layers"]:
                conv = layer.get("conv")
                if conv is not None:
                    conv = ConvShape(**conv)
                layers.append(LayerSpec(
                    layer["kind"], layer["in_dim"], layer["out_dim"],
                    layer.get("delta", 1.0), layer.get("activation"), conv))
            return cls(layers, doc["loss_kind"],
                       doc.get("regularizer_weight", 0.0))
        except (KeyError, TypeError) as err:
            raise pmp_utils.RejectedInputError(
                "malformed network description: {0!r}".format(err))


class ParamStack(object):
    """The control: one flat float64 vector per layer. Treated as immutable;
    replace() returns a new stack.
    """

    def __init__(self, spec, thetas):
        thetas = [np.array(theta, dtype=DTYPE) for theta in thetas]
        if len(thetas) != len(spec):
            raise pmp_utils.RejectedInputError(
                "network has {0} layers, got {1} parameter vectors"
                .format(len(spec), len(thetas)))
        for n, (layer, theta) in enumerate(zip(spec, thetas)):
            if theta.ndim != 1 or theta.size != layer.num_params:
                raise pmp_utils.RejectedInputError(
                    "layer {0} expects {1} parameters, got shape {2}"
                    .format(n, layer.num_params, theta.shape))
            pmp_utils.check_finite(theta, "parameters", n)
            theta.setflags(write=False)
        self.spec = spec
        self.thetas = thetas

    def __len__(self):
        return len(self.thetas)

    def __getitem__(self, n):
        return self.thetas[n]

    def __iter__(self):
        return iter(self.thetas)

    def replace(self, updates):
        """Return a new stack with {layer index: vector} substituted.
        """
        thetas = list(self.thetas)
        for n, theta in updates.items():
            thetas[n] = theta
        return ParamStack(self.spec, thetas)

    def flat(self):
        return np.concatenate(self.thetas)

    @classmethod
    def from_flat(cls, spec, vector):
        vector = np.asarray(vector, dtype=DTYPE)
        if vector.shape != (spec.num_params,):
            raise pmp_utils.RejectedInputError(
                "network has {0} parameters, got shape {1}"
                .format(spec.num_params, vector.shape))
        offsets = np.cumsum([0] + [layer.num_params for layer in spec])
        return cls(spec, [vector[offsets[n]:offsets[n + 1]]
                          for n in range(len(spec))])

    @classmethod
    def zeros(cls, spec):
        return cls(spec, [np.zeros(layer.num_params) for layer in spec])


class Batch(object):
    """Inputs (samples x input_dim) with real targets (regression) or
    integer class indices (classification).
    """

    def __init__(self, inputs, targets):
        inputs = np.asarray(inputs, dtype=DTYPE)
        targets = np.asarray(targets)
        if inputs.ndim != 2:
            raise pmp_utils.RejectedInputError(
                "inputs must be samples x dim, got shape {0}"
                .format(inputs.shape))
        if targets.ndim != 1 or targets.shape[0] != inputs.shape[0]:
            raise pmp_utils.RejectedInputError(
                "{0} inputs but targets of shape {1}"
                .format(inputs.shape[0], targets.shape))
        if np.issubdtype(targets.dtype, np.integer):
            if targets.size and targets.min() < 0:
                raise pmp_utils.RejectedInputError(
                    "class indices must be nonnegative")
            targets = targets.astype(np.int64)
        else:
            targets = targets.astype(DTYPE)
        self.inputs = inputs
        self.targets = targets

    @property
    def size(self):
        return self.inputs.shape[0]

    def subset(self, index):
        return Batch(self.inputs[index], self.targets[index])


# Activations -----------------------------------------------------------------

def _activate(activation, z):
    """Return sigma(z), sigma'(z), sigma''(z).
    """
    if activation == IDENTITY:
        return z, np.ones_like(z), np.zeros_like(z)
    t = np.tanh(z)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


# Convolution helpers (3x3 same padding, stride 1) ----------------------------

def _im2col(x, kernel):
    """(m, c, h, w) -> (m, c*k*k, h*w) patch columns.
    """
    m, c, h, w = x.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((m, c, kernel, kernel, h, w), dtype=DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(m, c * kernel * kernel, h * w)


def _col2im(cols, channels, h, w, kernel):
    """Adjoint of _im2col: scatter-add patch columns back onto the image.
    """
    m = cols.shape[0]
    pad = kernel // 2
    cols = cols.reshape(m, channels, kernel, kernel, h, w)
    xp = np.zeros((m, channels, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for i in range(kernel):
        for j in range(kernel):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


def _conv(cols, weights):
    """Apply the filter bank to patch columns: (m, co, h*w).
    """
    return np.matmul(weights.reshape(weights.shape[0], -1), cols)


def _conv_adjoint(u, weights, conv):
    """Transpose of x -> conv(x) applied to u (m, co, h*w).
    """
    cols = np.matmul(weights.reshape(weights.shape[0], -1).T, u)
    return _col2im(cols, conv.in_channels, conv.height, conv.width,
                   conv.kernel)


def _conv_weight_grad(cols, u, weight_shape):
    """Gradient of sum(u * conv(x)) w.r.t. the filters, batch-summed.
    """
    grad = np.matmul(u, cols.transpose(0, 2, 1)).sum(axis=0)
    return grad.reshape(weight_shape)


def _maxpool(a):
    """2x2/2 max-pool of (m, c, h, w). Ties resolve to the first element of
    the window in row-major order. Returns pooled values and window indices.
    """
    m, c, h, w = a.shape
    windows = a.reshape(m, c, h // 2, 2, w // 2, 2).transpose(
        0, 1, 2, 4, 3, 5).reshape(m, c, h // 2, w // 2, 4)
    index = np.argmax(windows, axis=-1)
    pooled = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return pooled, index


def _unpool(g, index):
    """Adjoint of _maxpool for fixed window indices.
    """
    m, c, hh, ww = g.shape
    windows = np.zeros((m, c, hh, ww, 4), dtype=DTYPE)
    np.put_along_axis(windows, index[..., None], g[..., None], axis=-1)
    return windows.reshape(m, c, hh, ww, 2, 2).transpose(
        0, 1, 2, 4, 3, 5).reshape(m, c, 2 * hh, 2 * ww)


# Layer linearization ---------------------------------------------------------

class LayerEval(object):
    """A layer evaluated at (x, theta), exposing the map and its exact
    first-order products. Shared intermediates are computed once, which keeps
    the per-layer Hamiltonian objectives cheap to evaluate repeatedly.
    """

    def __init__(self, spec, x, theta, layer_index=None):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != spec.in_dim:
            raise pmp_utils.RejectedInputError(
                "{0} layer expects states of width {1}, got shape {2}"
                .format(spec.kind, spec.in_dim, x.shape))
        pmp_utils.check_finite(x, "layer input", layer_index)
        weights, biases = spec.split(theta)
        self.spec = spec
        self.x = x
        self.m = x.shape[0]
        self.weights = weights
        self.biases = biases
        self.layer_index = layer_index
        self._pool_index = None
        if spec.is_conv:
            c = spec.conv
            self._x4 = x.reshape(self.m, c.in_channels, c.height, c.width)
            self._cols = _im2col(self._x4, c.kernel)
            z = _conv(self._cols, weights) + biases[None, :, None]
            self.z = z.reshape(self.m, c.out_channels, c.height, c.width)
        else:
            self.z = np.matmul(x, weights.T) + biases
        self.act, self.d1, self.d2 = _activate(spec.activation, self.z)

    # shape helpers
    def _to_image(self, p):
        c = self.spec.conv
        return p.reshape(self.m, c.out_channels, c.out_height, c.out_width)

    def _check_costate(self, p, what="costate"):
        p = np.asarray(p, dtype=DTYPE)
        if p.shape != (self.m, self.spec.out_dim):
            raise pmp_utils.RejectedInputError(
                "{0} must have shape {1}, got {2}"
                .format(what, (self.m, self.spec.out_dim), p.shape))
        return p

    def _check_direction(self, r):
        r = np.asarray(r, dtype=DTYPE)
        if r.shape != self.x.shape:
            raise pmp_utils.RejectedInputError(
                "direction must have shape {0}, got {1}"
                .format(self.x.shape, r.shape))
        return r

    def _upstream(self, p):
        """Costate pulled back through the pool (conv) to the shape of z.
        """
        if not self.spec.is_conv:
            return p
        p4 = self._to_image(p)
        if self.spec.conv.pool:
            if self._pool_index is None:
                self.forward()
            return _unpool(p4, self._pool_index)
        return p4

    def forward(self):
        spec = self.spec
        if spec.is_residual:
            out = self.x + spec.delta * self.act.reshape(self.m, -1)
        elif spec.is_conv and spec.conv.pool:
            pooled, self._pool_index = _maxpool(self.act)
            out = pooled.reshape(self.m, -1)
        else:
            out = self.act.reshape(self.m, -1)
        return pmp_utils.check_finite(out, "layer output", self.layer_index)

    def pullback_x(self, p):
        """grad_x (p . g(x, theta)) for every sample.
        """
        p = self._check_costate(p)
        spec = self.spec
        u = spec.step * self.d1 * self._upstream(p)
        if spec.is_conv:
            back = _conv_adjoint(u.reshape(self.m, u.shape[1], -1),
                                 self.weights, spec.conv).reshape(self.m, -1)
        else:
            back = np.matmul(u, self.weights)
        if spec.is_residual:
            back = p + back
        return back

    def grad_theta(self, p):
        """grad_theta sum_batch p . g(x, theta) as a flat vector.
        """
        p = self._check_costate(p)
        spec = self.spec
        u = spec.step * self.d1 * self._upstream(p)
        if spec.is_conv:
            u3 = u.reshape(self.m, u.shape[1], -1)
            grad_w = _conv_weight_grad(self._cols, u3, spec.weight_shape)
            grad_b = u3.sum(axis=(0, 2))
        else:
            grad_w = np.matmul(u.T, self.x)
            grad_b = u.sum(axis=0)
        return np.concatenate([grad_w.ravel(), grad_b])

    def mixed_grad(self, p, r):
        """grad_theta sum_batch p . (D_x g(x, theta) r): the vector-Jacobian
        product of theta -> grad_x (p . g) with direction r.
        """
        p = self._check_costate(p)
        r = self._check_direction(r)
        spec = self.spec
        upstream = spec.step * self._upstream(p)
        if spec.is_conv:
            r_cols = _im2col(
                r.reshape(self._x4.shape), spec.conv.kernel)
            v = _conv(r_cols, self.weights)
            a = (upstream * self.d2).reshape(v.shape) * v
            c = (upstream * self.d1).reshape(v.shape)
            grad_w = (_conv_weight_grad(self._cols, a, spec.weight_shape) +
                      _conv_weight_grad(r_cols, c, spec.weight_shape))
            grad_b = a.sum(axis=(0, 2))
        else:
            v = np.matmul(r, self.weights.T)
            a = upstream * self.d2 * v
            c = upstream * self.d1
            grad_w = np.matmul(a.T, self.x) + np.matmul(c.T, r)
            grad_b = a.sum(axis=0)
        return np.concatenate([grad_w.ravel(), grad_b])


def layer_forward(spec, x, theta_n):
    """g_n(x, theta_n) for a batch of states.
    """
    return LayerEval(spec, x, theta_n).forward()


def layer_pullback_x(spec, x, theta_n, p):
    """grad_x (p . g_n(x, theta_n)), per sample.
    """
    return LayerEval(spec, x, theta_n).pullback_x(p)


def layer_grad_theta(spec, x, theta_n, p):
    """grad_theta (p . g_n(x, theta_n)), summed over the batch.
    """
    return LayerEval(spec, x, theta_n).grad_theta(p)


def layer_mixed_grad(spec, x, theta_n, p, r):
    return LayerEval(spec, x, theta_n).mixed_grad(p, r)


# Terminal loss and regularizer -----------------------------------------------

def terminal_loss(spec, x_N, targets):
    """Per-sample terminal loss Phi and its gradient.

    sum_squared_scalar_target: (sum(x) - y)^2
    softmax_cross_entropy: logsumexp(x) - x[y]

    Returns (losses (m,), gradients (m, dim)).
    """
    x_N = np.asarray(x_N, dtype=DTYPE)
    targets = np.asarray(targets)
    if x_N.ndim != 2 or x_N.shape[1] != spec.output_dim:
        raise pmp_utils.RejectedInputError(
            "final states must have width {0}, got shape {1}"
            .format(spec.output_dim, x_N.shape))
    if targets.shape != (x_N.shape[0],):
        raise pmp_utils.RejectedInputError(
            "{0} final states but targets of shape {1}"
            .format(x_N.shape[0], targets.shape))
    pmp_utils.check_finite(x_N, "final state")
    if spec.loss_kind == SUM_SQUARED:
        if not np.issubdtype(targets.dtype, np.floating):
            raise pmp_utils.RejectedInputError(
                "{0} needs real-valued targets, got {1}"
                .format(SUM_SQUARED, targets.dtype))
        residual = x_N.sum(axis=1) - targets
        losses = residual * residual
        grads = np.repeat(2.0 * residual[:, None], x_N.shape[1], axis=1)
        return losses, grads
    if not np.issubdtype(targets.dtype, np.integer):
        raise pmp_utils.RejectedInputError(
            "{0} needs integer class targets, got {1}"
            .format(CROSS_ENTROPY, targets.dtype))
    if targets.size and (targets.min() < 0 or
                         targets.max() >= x_N.shape[1]):
        raise pmp_utils.RejectedInputError(
            "class indices must lie in [0, {0})".format(x_N.shape[1]))
    rows = np.arange(x_N.shape[0])
    shifted = x_N - x_N.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    losses = np.log(total) - shifted[rows, targets]
    grads = exp / total[:, None]
    grads[rows, targets] -= 1.0
    return losses, grads


def regularizer(theta_n, weight):
    """L(theta) = weight * ||theta||^2 and its gradient.
    """
    if weight < 0:
        raise pmp_utils.RejectedInputError(
            "regularizer weight must be >= 0, got {0}".format(weight))
    theta_n = np.asarray(theta_n, dtype=DTYPE)
    return weight * float(np.dot(theta_n, theta_n)), 2.0 * weight * theta_n
