"""Per-timestep value approximator: a small convolutional network trained by
plain SGD, written directly in numpy at 64-bit precision.

The fixed architecture maps a 64x64x6 image stack (two 3-channel height-map
images) plus a 6-vector action to a scalar value:

    conv 8 @ 5x5 stride 2, rectifier
    conv 16 @ 3x3 stride 2, rectifier
    flatten, concatenate action vector
    dense 64, rectifier
    dense 1, linear

Images are channels-last (H, W, C). Parameters live in one flat float64
vector; per-layer arrays are views into it, which keeps snapshots,
finite-difference checks, and SGD updates simple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"HSE3S-QF\n"
_VERSION = 1


class WeightsFormatError(RuntimeError):
    """Raised when a weight snapshot cannot be read; names the bad section."""


@dataclass(frozen=True)
class Arch:
    """Network shape; the defaults are the only configuration exercised."""

    image_size: int = 64
    image_channels: int = 6
    action_dim: int = 6
    conv1_filters: int = 8
    conv1_kernel: int = 5
    conv1_stride: int = 2
    conv2_filters: int = 16
    conv2_kernel: int = 3
    conv2_stride: int = 2
    dense_units: int = 64

    @property
    def conv1_out(self) -> int:
        return (self.image_size - self.conv1_kernel) // self.conv1_stride + 1

    @property
    def conv2_out(self) -> int:
        return (self.conv1_out - self.conv2_kernel) // self.conv2_stride + 1

    @property
    def flat_dim(self) -> int:
        return self.conv2_out * self.conv2_out * self.conv2_filters

    def layer_shapes(self):
        k1 = self.conv1_kernel
        k2 = self.conv2_kernel
        return (
            ("w1", (self.image_channels * k1 * k1, self.conv1_filters)),
            ("b1", (self.conv1_filters,)),
            ("w2", (self.conv1_filters * k2 * k2, self.conv2_filters)),
            ("b2", (self.conv2_filters,)),
            ("w3", (self.flat_dim + self.action_dim, self.dense_units)),
            ("b3", (self.dense_units,)),
            ("w4", (self.dense_units, 1)),
            ("b4", (1,)),
        )

    @property
    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())

    def descriptor(self) -> str:
        return ("input %d %d action %d conv %d %d %d conv %d %d %d "
                "dense %d dense 1" % (
                    self.image_size, self.image_channels, self.action_dim,
                    self.conv1_filters, self.conv1_kernel, self.conv1_stride,
                    self.conv2_filters, self.conv2_kernel, self.conv2_stride,
                    self.dense_units))


@dataclass
class QFunction:
    """A trainable scalar value function Q(images, action)."""

    arch: Arch
    parameters: np.ndarray
    step_count: int = 0
    _views: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        p = np.asarray(self.parameters, dtype=np.float64)
        if p.shape != (self.arch.parameter_count,):
            raise ValueError("parameter vector has wrong length")
        if not np.all(np.isfinite(p)):
            raise ValueError("parameters must be finite")
        self.parameters = p
        self._views = _layer_views(self.arch, p)


def _layer_views(arch: Arch, flat: np.ndarray) -> dict:
    views = {}
    offset = 0
    for name, shape in arch.layer_shapes():
        size = int(np.prod(shape))
        views[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return views


def init(arch: Arch, seed: int) -> QFunction:
    """Initialize weights uniformly with fan-in scaling; biases are zero."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(arch.parameter_count)
    views = _layer_views(arch, flat)
    for name in ("w1", "w2", "w3", "w4"):
        w = views[name]
        bound = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, w.shape)
    return QFunction(arch, flat)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, H, W, C) -> (B, Ho, Wo, C*k*k) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (B, Ho, Wo, C, k, k)
    b, ho, wo = windows.shape[:3]
    return windows.reshape(b, ho, wo, -1)


def _conv_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray, k: int,
                 stride: int) -> np.ndarray:
    """Convolution as k*k accumulated GEMMs over strided input views.

    Avoids materializing the full patch matrix, which dominates runtime for
    the first layer. w has im2col layout (C*k*k, F) with (c, ky, kx) rows.
    """
    cin = x.shape[-1]
    fout = w.shape[1]
    ho = (x.shape[1] - k) // stride + 1
    span = (ho - 1) * stride + 1
    wr = w.reshape(cin, k, k, fout)
    out = np.empty((x.shape[0], ho, ho, fout))
    out[...] = b
    for ky in range(k):
        for kx in range(k):
            xs = x[:, ky:ky + span:stride, kx:kx + span:stride, :]
            out += xs @ np.ascontiguousarray(wr[:, ky, kx])
    return out


def _conv_direct_wgrad(x: np.ndarray, dout: np.ndarray, k: int,
                       stride: int) -> np.ndarray:
    """Weight gradient of _conv_direct; returns (C*k*k, F)."""
    cin = x.shape[-1]
    fout = dout.shape[-1]
    ho = dout.shape[1]
    span = (ho - 1) * stride + 1
    dflat = dout.reshape(-1, fout)
    g = np.empty((cin, k, k, fout))
    for ky in range(k):
        for kx in range(k):
            xs = x[:, ky:ky + span:stride, kx:kx + span:stride, :]
            g[:, ky, kx] = xs.reshape(-1, cin).T @ dflat
    return g.reshape(cin * k * k, fout)


def _conv_backward_to_input(dcols, b, hin, channels, k, stride, ho):
    """Scatter (B, Ho, Wo, C*k*k) patch grads back onto (B, Hin, Hin, C)."""
    dx = np.zeros((b, hin, hin, channels))
    d = dcols.reshape(b, ho, ho, channels, k, k)
    span = (ho - 1) * stride + 1
    for ky in range(k):
        for kx in range(k):
            dx[:, ky:ky + span:stride, kx:kx + span:stride, :] += d[..., ky, kx]
    return dx


def _forward_pass(q: QFunction, images: np.ndarray, actions: np.ndarray,
                  keep: bool):
    """Shared forward path for a batch.

    images: (B, H, W, C) float64; actions: (B, action_dim).
    Returns predictions (B,) and, when keep=True, the cache for backward.
    """
    v = q._views
    a = q.arch
    act1 = _conv_direct(images, v["w1"], v["b1"], a.conv1_kernel,
                        a.conv1_stride)
    np.maximum(act1, 0.0, out=act1)
    cols2 = _im2col(act1, a.conv2_kernel, a.conv2_stride)
    act2 = cols2 @ v["w2"] + v["b2"]
    np.maximum(act2, 0.0, out=act2)
    flat = act2.reshape(images.shape[0], -1)
    n = a.flat_dim
    act3 = flat @ v["w3"][:n] + actions @ v["w3"][n:] + v["b3"]
    np.maximum(act3, 0.0, out=act3)
    out = (act3 @ v["w4"] + v["b4"])[:, 0]
    if not keep:
        return out, None
    return out, (act1, cols2, act2, flat, act3)


def _check_shapes(q: QFunction, images: np.ndarray, actions: np.ndarray):
    a = q.arch
    expected = (a.image_size, a.image_size, a.image_channels)
    if images.shape[1:] != expected:
        raise ValueError("image batch shape %s does not match arch %s"
                         % (images.shape[1:], expected))
    if actions.shape[1:] != (a.action_dim,):
        raise ValueError("action batch shape %s does not match arch (%d,)"
                         % (actions.shape[1:], a.action_dim))


def forward(q: QFunction, images: np.ndarray, action: np.ndarray) -> float:
    """Evaluate the value of one (image stack, action) pair."""
    img = np.asarray(images, dtype=np.float64)[None]
    act = np.asarray(action, dtype=np.float64)[None]
    _check_shapes(q, img, act)
    out, _ = _forward_pass(q, img, act, keep=False)
    return float(out[0])


def forward_batch(q: QFunction, images: np.ndarray,
                  actions: np.ndarray) -> np.ndarray:
    """Evaluate a batch of (image stack, action) pairs."""
    img = np.asarray(images, dtype=np.float64)
    act = np.asarray(actions, dtype=np.float64)
    _check_shapes(q, img, act)
    out, _ = _forward_pass(q, img, act, keep=False)
    return out


def forward_candidates(q: QFunction, images: np.ndarray,
                       actions: np.ndarray) -> np.ndarray:
    """Evaluate many actions against one shared image stack.

    The convolutional trunk runs once; only the dense head is repeated per
    action. Results equal forward() on each pair.
    """
    img = np.asarray(images, dtype=np.float64)[None]
    acts = np.asarray(actions, dtype=np.float64)
    _check_shapes(q, img, acts)
    v = q._views
    a = q.arch
    act1 = _conv_direct(img, v["w1"], v["b1"], a.conv1_kernel, a.conv1_stride)
    np.maximum(act1, 0.0, out=act1)
    cols2 = _im2col(act1, a.conv2_kernel, a.conv2_stride)
    act2 = np.maximum(cols2 @ v["w2"] + v["b2"], 0.0)
    flat = act2.reshape(1, -1)
    n = a.flat_dim
    head = flat @ v["w3"][:n] + v["b3"]  # (1, dense)
    pre3 = head + acts @ v["w3"][n:]
    act3 = np.maximum(pre3, 0.0)
    return (act3 @ v["w4"] + v["b4"])[:, 0]


def loss_and_grad(q: QFunction, images: np.ndarray, actions: np.ndarray,
                  labels: np.ndarray):
    """Mean-squared-error loss and its gradient as a flat vector."""
    img = np.asarray(images, dtype=np.float64)
    act = np.asarray(actions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_shapes(q, img, act)
    b = img.shape[0]
    a = q.arch
    v = q._views
    pred, cache = _forward_pass(q, img, act, keep=True)
    act1, cols2, act2, flat, act3 = cache
    err = pred - y
    loss = float(err @ err) / b

    grad = np.zeros_like(q.parameters)
    g = _layer_views(a, grad)
    n = a.flat_dim
    dy = (2.0 / b) * err[:, None]  # (B, 1)
    g["w4"][...] = act3.T @ dy
    g["b4"][...] = dy.sum(axis=0)
    dh3 = (dy @ v["w4"].T) * (act3 > 0.0)
    g["w3"][:n] = flat.T @ dh3
    g["w3"][n:] = act.T @ dh3
    g["b3"][...] = dh3.sum(axis=0)
    dflat = dh3 @ v["w3"][:n].T
    dact2 = dflat.reshape(b, a.conv2_out, a.conv2_out, a.conv2_filters)
    dpre2 = dact2 * (act2 > 0.0)
    g["w2"][...] = cols2.reshape(-1, cols2.shape[-1]).T @ dpre2.reshape(
        -1, a.conv2_filters)
    g["b2"][...] = dpre2.sum(axis=(0, 1, 2))
    dcols2 = dpre2 @ v["w2"].T
    dact1 = _conv_backward_to_input(dcols2, b, a.conv1_out, a.conv1_filters,
                                    a.conv2_kernel, a.conv2_stride,
                                    a.conv2_out)
    dact1 *= act1 > 0.0
    g["w1"][...] = _conv_direct_wgrad(img, dact1, a.conv1_kernel,
                                      a.conv1_stride)
    g["b1"][...] = dact1.sum(axis=(0, 1, 2))
    return loss, grad


def sgd_step(q: QFunction, batch, lr: float):
    """One SGD step on a batch of (images, action, label) samples.

    batch may be a TrainBatch-style tuple (images (B,H,W,C), actions (B,6),
    labels (B,)). Returns the updated network and the pre-update loss.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    images, actions, labels = batch
    loss, grad = loss_and_grad(q, images, actions, labels)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in sgd_step (loss=%r)" % loss)
    new_params = q.parameters - lr * grad
    return QFunction(q.arch, new_params, q.step_count + 1), loss


def _activation_signs(cache):
    act1, _cols2, act2, _flat, act3 = cache
    return (act1 > 0.0, act2 > 0.0, act3 > 0.0)


def grad_check(q: QFunction, sample, epsilon: float = 1e-6,
               n_params: int = 50, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    sample is a single (images, action, label) triple; a random subset of
    parameters is perturbed. Perturbations that flip a rectifier's activation
    sign sit on a kink where the loss is not differentiable, so those
    parameters are skipped (the standard guard for rectifier networks).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    images, action, label = sample
    img = np.asarray(images, dtype=np.float64)[None]
    act = np.asarray(action, dtype=np.float64)[None]
    y = np.asarray([label], dtype=np.float64)
    _, grad = loss_and_grad(q, img, act, y)
    rng = np.random.default_rng(seed)
    idx = rng.choice(q.parameters.size, size=min(n_params, q.parameters.size),
                     replace=False)
    worst = 0.0
    params = q.parameters
    for i in idx:
        orig = params[i]
        params[i] = orig + epsilon
        up, cache_up = _forward_pass(q, img, act, keep=True)
        lu = float((up[0] - y[0]) ** 2)
        params[i] = orig - epsilon
        dn, cache_dn = _forward_pass(q, img, act, keep=True)
        ld = float((dn[0] - y[0]) ** 2)
        params[i] = orig
        if any(not np.array_equal(a, b) for a, b in
               zip(_activation_signs(cache_up), _activation_signs(cache_dn))):
            continue
        numeric = (lu - ld) / (2.0 * epsilon)
        denom = max(abs(numeric), abs(grad[i]), 1e-8)
        worst = max(worst, abs(numeric - grad[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def save(q: QFunction, path):
    """Write a weight snapshot: magic, version, arch descriptor, step count,
    parameter count, then little-endian float64 parameters in layer order.
    """
    payload = q.parameters.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(b"version %d\n" % _VERSION)
        f.write(b"arch %s\n" % q.arch.descriptor().encode())
        f.write(b"steps %d\n" % q.step_count)
        f.write(b"params %d\n" % q.parameters.size)
        f.write(payload)


def _read_line(f, section):
    line = f.readline()
    if not line or not line.endswith(b"\n"):
        raise WeightsFormatError("truncated %s section" % section)
    return line[:-1]


def load(path) -> QFunction:
    """Read a weight snapshot written by save(); errors name the bad section."""
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise WeightsFormatError("bad magic section")
        version = _read_line(f, "version")
        if not version.startswith(b"version "):
            raise WeightsFormatError("bad version section")
        try:
            ver = int(version.split()[1])
        except (IndexError, ValueError):
            raise WeightsFormatError("bad version section")
        if ver != _VERSION:
            raise WeightsFormatError(
                "incompatible snapshot version %d (expected %d)"
                % (ver, _VERSION))
        arch_line = _read_line(f, "arch")
        if not arch_line.startswith(b"arch "):
            raise WeightsFormatError("bad arch section")
        arch = _parse_descriptor(arch_line[5:].decode())
        steps_line = _read_line(f, "steps")
        if not steps_line.startswith(b"steps "):
            raise WeightsFormatError("bad steps section")
        steps = int(steps_line.split()[1])
        count_line = _read_line(f, "params")
        if not count_line.startswith(b"params "):
            raise WeightsFormatError("bad params section")
        count = int(count_line.split()[1])
        if count != arch.parameter_count:
            raise WeightsFormatError(
                "params section disagrees with arch (%d vs %d)"
                % (count, arch.parameter_count))
        payload = f.read(count * 8)
        if len(payload) != count * 8:
            raise WeightsFormatError("truncated payload section")
        extra = f.read(1)
        if extra:
            raise WeightsFormatError("trailing bytes after payload section")
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return QFunction(arch, params, steps)


def _parse_descriptor(text: str) -> Arch:
    tokens = text.split()
    try:
        if (tokens[0] != "input" or tokens[3] != "action"
                or tokens[5] != "conv" or tokens[9] != "conv"
                or tokens[13] != "dense" or tokens[15] != "dense"):
            raise WeightsFormatError("bad arch section: %r" % text)
        arch = Arch(
            image_size=int(tokens[1]), image_channels=int(tokens[2]),
            action_dim=int(tokens[4]),
            conv1_filters=int(tokens[6]), conv1_kernel=int(tokens[7]),
            conv1_stride=int(tokens[8]),
            conv2_filters=int(tokens[10]), conv2_kernel=int(tokens[11]),
            conv2_stride=int(tokens[12]),
            dense_units=int(tokens[14]))
    except (IndexError, ValueError):
        raise WeightsFormatError("bad arch section: %r" % text)
    return arch
