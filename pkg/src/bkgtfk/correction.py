"""Coefficient network correcting the GTFK pricer.

A small dense tanh network maps the standardized calibration features
``(a, sigma, theta, r0, tenor)`` to polynomial coefficients ``A_0 .. A_n``.
The correction shifts the path-average log rate wherever it enters an
exponential,

    x_bar' = x_bar + sum_i c_i * x_bar^i,

with ``c_i = A_i`` or, when Taylor weighting is on, ``c_i = A_i / i!`` so the
coefficients line up with the series of ``exp``.  The output layer is scaled
by ``output_scale`` (epsilon), which bounds every coefficient strictly inside
``(-epsilon, epsilon)`` and keeps the corrected price a small perturbation of
the uncorrected one.

Training is plain gradient descent on the mean absolute error against Monte
Carlo target prices, with central finite-difference gradients (pricing is not
autodifferentiable) and two-stage gradient clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import FROZEN_STATS, ModelCalibration, NormalizationStats, normalize
from .gtfk import QuadratureSpec, gtfk_price

__all__ = [
    "DenseLayer",
    "CoefficientNet",
    "TrainConfig",
    "TrainingDivergedError",
    "forward",
    "correct_xbar",
    "corrected_price",
    "l1_loss",
    "clip_gradient",
    "fd_gradient",
    "train",
    "init_net",
    "frozen_reference_net",
    "save_net",
    "load_net",
    "net_parameters",
    "with_parameters",
]

WEIGHT_FILE_VERSION = 1

_INPUT_WIDTH = 5


class TrainingDivergedError(ArithmeticError):
    """Training produced a non-finite loss; carries the partial history."""

    def __init__(self, message: str, epoch: int, history: list[tuple[int, float]]):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


@dataclass(frozen=True)
class DenseLayer:
    """One dense layer with tanh activation: ``v -> tanh(W v + bias)``."""

    weights: np.ndarray  # shape (out, in)
    bias: np.ndarray  # shape (out,)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer weights must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.tanh(self.weights @ v + self.bias)


@dataclass(frozen=True)
class CoefficientNet:
    """Dense tanh network producing polynomial correction coefficients.

    Parameters
    ----------
    stats : NormalizationStats
        Standardization constants applied to the raw inputs.
    layers : tuple of DenseLayer
        First layer consumes the 5 standardized inputs; the last emits
        ``degree + 1`` values.  Every layer uses tanh.
    degree : int
        Polynomial degree ``n``; the network outputs ``A_0 .. A_n``.
    output_scale : float
        Epsilon in ``(0, 1]`` multiplying the final tanh outputs.
    taylor_weighting : bool
        Divide coefficient ``A_i`` by ``i!`` when applying the correction.
    """

    stats: NormalizationStats
    layers: tuple[DenseLayer, ...]
    degree: int = 4
    output_scale: float = 0.01
    taylor_weighting: bool = True

    def __post_init__(self) -> None:
        if len(self.layers) == 0:
            raise ValueError("network needs at least one layer")
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a non-negative integer, got {self.degree!r}")
        if not (0.0 < self.output_scale <= 1.0):
            raise ValueError(f"output_scale must lie in (0, 1], got {self.output_scale!r}")
        if self.layers[0].weights.shape[1] != _INPUT_WIDTH:
            raise ValueError(
                f"first layer must take {_INPUT_WIDTH} inputs, "
                f"takes {self.layers[0].weights.shape[1]}"
            )
        if self.layers[-1].weights.shape[0] != self.degree + 1:
            raise ValueError(
                f"last layer must emit degree + 1 = {self.degree + 1} outputs, "
                f"emits {self.layers[-1].weights.shape[0]}"
            )
        for k in range(1, len(self.layers)):
            if self.layers[k].weights.shape[1] != self.layers[k - 1].weights.shape[0]:
                raise ValueError(f"layer {k} input width does not match layer {k - 1} output width")


def forward(net: CoefficientNet, calib: ModelCalibration, tenor: float) -> np.ndarray:
    """Coefficients ``A_0 .. A_n`` for one calibration/tenor pair.

    Every component lies strictly inside ``(-output_scale, +output_scale)``
    because the last activation is tanh.
    """
    v = normalize(calib.as_inputs(tenor), net.stats)
    for layer in net.layers:
        v = layer.apply(v)
    return net.output_scale * v


def correct_xbar(x_bar, coefficients: np.ndarray, taylor_weighting: bool = True):
    """Apply the polynomial shift ``x' = x + sum_i c_i x^i``.

    ``c_i = coefficients[i] / i!`` under Taylor weighting, else the raw
    coefficient.  Works on scalars and arrays alike.
    """
    coeffs = np.asarray(coefficients, dtype=float)
    if coeffs.ndim != 1 or coeffs.size == 0:
        raise ValueError("coefficients must be a non-empty 1-d array")
    if taylor_weighting:
        coeffs = coeffs / np.array([math.factorial(i) for i in range(coeffs.size)])
    x = np.asarray(x_bar, dtype=float)
    shift = np.polyval(coeffs[::-1], x)
    out = x + shift
    return float(out) if np.isscalar(x_bar) else out


def corrected_price(
    calib: ModelCalibration,
    tenor: float,
    net: CoefficientNet,
    quad: QuadratureSpec | None = None,
    lam: float = 1.0,
    mode: str = "discount",
) -> float:
    """GTFK price with the network's shift applied to every ``e^{x_bar}``
    occurrence (self-consistency coupling and payoff smear); the Gaussian
    path-average weight keeps the raw nodes.

    A net that outputs all zeros reproduces :func:`gtfk_price` bit for bit.
    """
    coeffs = forward(net, calib, tenor)
    shift = lambda x: correct_xbar(x, coeffs, net.taylor_weighting)
    return gtfk_price(calib, tenor, quad=quad, lam=lam, mode=mode, correction=shift)


def l1_loss(predicted, target) -> float:
    """Mean absolute error between two equal-length sequences."""
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError(f"predicted and target must be non-empty 1-d of equal length, got {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


def clip_gradient(gradient, value_cap: float, norm_cap: float) -> np.ndarray:
    """Two-stage clipping: componentwise to ``[-value_cap, value_cap]``,
    then rescale onto the L2 ball of radius ``norm_cap`` if still too long."""
    if not (value_cap > 0.0 and norm_cap > 0.0):
        raise ValueError("caps must be strictly positive")
    g = np.asarray(gradient, dtype=float)
    clipped = np.clip(g, -value_cap, value_cap)
    norm = float(np.linalg.norm(clipped))
    if norm > norm_cap:
        clipped = clipped * (norm_cap / norm)
    return clipped


def fd_gradient(objective, params: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of ``objective`` at ``params``.

    Raises
    ------
    ArithmeticError
        If either probe of some parameter returns a non-finite value; the
        message names the parameter index.
    """
    if not (h > 0.0 and math.isfinite(h)):
        raise ValueError(f"fd step must be strictly positive, got {h!r}")
    p = np.asarray(params, dtype=float)
    grad = np.empty_like(p)
    for i in range(p.size):
        bumped = p.copy()
        bumped[i] = p[i] + h
        up = objective(bumped)
        bumped[i] = p[i] - h
        down = objective(bumped)
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ArithmeticError(
                f"objective returned a non-finite value probing parameter {i} "
                f"(+h -> {up!r}, -h -> {down!r})"
            )
        grad[i] = (up - down) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent settings.

    ``fd_step`` is the central-difference half-width; ``seed`` controls
    network initialization in the CLI (training itself draws no randomness).
    ``bias_only`` freezes all weight matrices and descends on biases alone.
    """

    learning_rate: float = 1e-3
    epochs: int = 200
    value_cap: float = 1.0
    norm_cap: float = 5.0
    fd_step: float = 1e-5
    seed: int = 0
    bias_only: bool = False

    def __post_init__(self) -> None:
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate!r}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not (self.value_cap > 0.0 and self.norm_cap > 0.0):
            raise ValueError("gradient caps must be strictly positive")
        if not (self.fd_step > 0.0 and math.isfinite(self.fd_step)):
            raise ValueError(f"fd_step must be strictly positive, got {self.fd_step!r}")


def net_parameters(net: CoefficientNet) -> np.ndarray:
    """Flatten all weights and biases (layer by layer, weights row-major then
    bias) into one parameter vector."""
    parts = []
    for layer in net.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def with_parameters(net: CoefficientNet, params: np.ndarray) -> CoefficientNet:
    """Rebuild a structurally identical net from a flat parameter vector."""
    params = np.asarray(params, dtype=float)
    layers = []
    pos = 0
    for layer in net.layers:
        n_w = layer.weights.size
        w = params[pos:pos + n_w].reshape(layer.weights.shape)
        pos += n_w
        n_b = layer.bias.size
        b = params[pos:pos + n_b].copy()
        pos += n_b
        layers.append(DenseLayer(weights=w, bias=b))
    if pos != params.size:
        raise ValueError(f"parameter vector length {params.size} does not match network ({pos})")
    return replace(net, layers=tuple(layers))


def _bias_mask(net: CoefficientNet) -> np.ndarray:
    parts = []
    for layer in net.layers:
        parts.append(np.zeros(layer.weights.size))
        parts.append(np.ones(layer.bias.size))
    return np.concatenate(parts)


def train(
    net: CoefficientNet,
    points: list[tuple[ModelCalibration, float]],
    targets: list[float],
    cfg: TrainConfig,
    quad: QuadratureSpec | None = None,
    lam: float = 1.0,
    mode: str = "discount",
) -> tuple[CoefficientNet, list[tuple[int, float]]]:
    """Descend the mean-|error| of corrected prices against target prices.

    Returns the trained network and a loss history with exactly
    ``cfg.epochs`` rows ``(epoch, loss)``, where the loss is measured before
    that epoch's update (row 0 is the initial loss).  Zero epochs return the
    network unchanged with an empty history; zero learning rate leaves the
    loss history constant.

    Raises
    ------
    TrainingDivergedError
        On a non-finite loss; the exception carries the history up to the
        failing epoch.
    """
    if len(points) != len(targets) or len(points) == 0:
        raise ValueError("points and targets must be non-empty and of equal length")
    target_arr = [float(t) for t in targets]

    def objective(params: np.ndarray) -> float:
        candidate = with_parameters(net, params)
        prices = [corrected_price(c, t, candidate, quad=quad, lam=lam, mode=mode)
                  for c, t in points]
        return l1_loss(prices, target_arr)

    params = net_parameters(net)
    mask = _bias_mask(net) if cfg.bias_only else None
    history: list[tuple[int, float]] = []
    for epoch in range(cfg.epochs):
        try:
            loss = objective(params)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", epoch, history
                )
            history.append((epoch, loss))
            grad = fd_gradient(objective, params, cfg.fd_step)
        except TrainingDivergedError:
            raise
        except ArithmeticError as exc:
            # A pricing failure mid-descent is divergence too; keep the history.
            raise TrainingDivergedError(
                f"pricing failed at epoch {epoch}: {exc}", epoch, history
            ) from exc
        grad = clip_gradient(grad, cfg.value_cap, cfg.norm_cap)
        if mask is not None:
            grad = grad * mask
        params = params - cfg.learning_rate * grad
    return with_parameters(net, params), history


def init_net(
    seed: int,
    hidden: int = 8,
    degree: int = 4,
    output_scale: float = 0.01,
    taylor_weighting: bool = True,
    stats: NormalizationStats = FROZEN_STATS,
) -> CoefficientNet:
    """Deterministically initialized network.

    Hidden weights are drawn N(0, 1/fan_in); the output layer starts at
    all-zero weights and biases, so a fresh network emits zero coefficients
    everywhere and the corrected price coincides with the uncorrected one
    until training moves it.

    ``hidden = 0`` builds the single-layer architecture (5 inputs straight to
    the coefficients); otherwise one hidden layer of the given width.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    out_width = degree + 1
    if hidden > 0:
        shapes = [(hidden, _INPUT_WIDTH), (out_width, hidden)]
    else:
        shapes = [(out_width, _INPUT_WIDTH)]
    layers = []
    for k, (n_out, n_in) in enumerate(shapes):
        if k == len(shapes) - 1:
            w = np.zeros((n_out, n_in))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_out, n_in))
        layers.append(DenseLayer(weights=w, bias=np.zeros(n_out)))
    return CoefficientNet(stats=stats, layers=tuple(layers), degree=degree,
                          output_scale=output_scale, taylor_weighting=taylor_weighting)


# Reference single-layer weights shipped with the package (rows A_0..A_4,
# columns a, sigma, theta, r0, tenor).  Together with FROZEN_STATS they form
# the frozen regression fixture used by the golden tests and the CLI demo.
_REFERENCE_WEIGHTS = np.array([
    [2.47e-2, -1.189e-1, 1.3e-3, 3.99e-2, -9.94e-2],
    [-5.528e-1, 1.771e-1, -3.44e-2, 2.028e-1, -2.822e-1],
    [0.0, -6.9e-3, 0.0, 1.81e-2, 5.6e-3],
    [2.82e-2, -7.620e-2, 0.0, 1.50e-3, 0.0],
    [6.719e-1, -3.589e-1, 4.072e-1, -1.073e-1, -1.532],
])
_REFERENCE_BIAS = np.array([-0.2613, 0.8864, -8.5120, 8.6874, -0.5019])


def frozen_reference_net(output_scale: float = 1.0, taylor_weighting: bool = False) -> CoefficientNet:
    """The frozen single-layer reference network (degree 4, raw coefficient
    weighting, unit output scale)."""
    layer = DenseLayer(weights=_REFERENCE_WEIGHTS.copy(), bias=_REFERENCE_BIAS.copy())
    return CoefficientNet(stats=FROZEN_STATS, layers=(layer,), degree=4,
                          output_scale=output_scale, taylor_weighting=taylor_weighting)


def save_net(net: CoefficientNet, path: str) -> None:
    """Serialize a network to the versioned plain-text weight format.

    Floats are written with ``repr`` (shortest round-trip decimal), so a
    load/save cycle reproduces the file byte for byte.
    """
    lines = [f"bkgtfk-weights v{WEIGHT_FILE_VERSION}"]
    lines.append("stats 5")
    names = ("a", "sigma", "theta", "r0", "tenor")
    for name, m, s in zip(names, net.stats.means, net.stats.stdevs):
        lines.append(f"{name} {float(m)!r} {float(s)!r}")
    lines.append(f"layers {len(net.layers)}")
    for layer in net.layers:
        n_out, n_in = layer.weights.shape
        lines.append(f"layer {n_out} {n_in}")
        for row in layer.weights:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append("bias " + " ".join(repr(float(v)) for v in layer.bias))
    lines.append(f"output_scale {float(net.output_scale)!r}")
    lines.append(f"degree {net.degree}")
    lines.append(f"taylor_weighting {'true' if net.taylor_weighting else 'false'}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_net(path: str) -> CoefficientNet:
    """Parse a weight file written by :func:`save_net`.

    Raises
    ------
    ValueError
        On version mismatch or any structural defect in the file.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    it = iter(lines)

    def next_line() -> str:
        try:
            return next(it)
        except StopIteration:
            raise ValueError(f"truncated weight file {path!r}") from None

    header = next_line().split()
    if len(header) != 2 or header[0] != "bkgtfk-weights" or header[1] != f"v{WEIGHT_FILE_VERSION}":
        raise ValueError(f"unsupported weight file header {' '.join(header)!r}")
    stats_hdr = next_line().split()
    if stats_hdr != ["stats", "5"]:
        raise ValueError(f"malformed stats block header {stats_hdr!r}")
    means, stdevs = [], []
    for expected in ("a", "sigma", "theta", "r0", "tenor"):
        fields = next_line().split()
        if len(fields) != 3 or fields[0] != expected:
            raise ValueError(f"malformed stats line for {expected!r}: {fields!r}")
        means.append(float(fields[1]))
        stdevs.append(float(fields[2]))
    stats = NormalizationStats(means=tuple(means), stdevs=tuple(stdevs))

    layers_hdr = next_line().split()
    if len(layers_hdr) != 2 or layers_hdr[0] != "layers":
        raise ValueError(f"malformed layer count line {layers_hdr!r}")
    n_layers = int(layers_hdr[1])
    layers = []
    for _ in range(n_layers):
        shape = next_line().split()
        if len(shape) != 3 or shape[0] != "layer":
            raise ValueError(f"malformed layer header {shape!r}")
        n_out, n_in = int(shape[1]), int(shape[2])
        rows = []
        for _ in range(n_out):
            row = [float(v) for v in next_line().split()]
            if len(row) != n_in:
                raise ValueError(f"weight row length {len(row)} does not match layer width {n_in}")
            rows.append(row)
        bias_fields = next_line().split()
        if bias_fields[0] != "bias" or len(bias_fields) != n_out + 1:
            raise ValueError(f"malformed bias line {bias_fields!r}")
        bias = [float(v) for v in bias_fields[1:]]
        layers.append(DenseLayer(weights=np.array(rows), bias=np.array(bias)))

    scale_fields = next_line().split()
    if len(scale_fields) != 2 or scale_fields[0] != "output_scale":
        raise ValueError(f"malformed output_scale line {scale_fields!r}")
    degree_fields = next_line().split()
    if len(degree_fields) != 2 or degree_fields[0] != "degree":
        raise ValueError(f"malformed degree line {degree_fields!r}")
    taylor_fields = next_line().split()
    if len(taylor_fields) != 2 or taylor_fields[0] != "taylor_weighting" or \
            taylor_fields[1] not in ("true", "false"):
        raise ValueError(f"malformed taylor_weighting line {taylor_fields!r}")
    return CoefficientNet(
        stats=stats,
        layers=tuple(layers),
        degree=int(degree_fields[1]),
        output_scale=float(scale_fields[1]),
        taylor_weighting=taylor_fields[1] == "true",
    )
