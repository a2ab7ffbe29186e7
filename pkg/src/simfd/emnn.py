"""End-to-end network: TX-DNN, power control, TX/RX stack layers, channel,
RX-DNN, for both terminals in one differentiable graph.

Signals between the digital front-ends are paired real tensors (see
autograd). Terminal q transmits its own bit stream and decodes the other
terminal's; the concatenated soft output is aligned with the concatenated
input [b1 | b2]. Propagation and channel matrices enter the graph as fixed
constants; the trainable state is the DNN weights, the per-layer phase
vectors, batchnorm scale/shift, and (optionally) the power allocation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import channel as ch
from . import wavefield as wf

POWER_EPS = 1e-12


class ArchitectureError(ValueError):
    """Configuration and network structure disagree."""


@dataclass(frozen=True)
class EmnnArchitecture:
    """Layer-width schedule of the full network for one configuration."""

    n_bits: tuple
    tx_antennas: tuple
    rx_antennas: tuple
    tx_units: tuple
    rx_units: tuple
    tx_layers: tuple
    rx_layers: tuple

    def other(self, q):
        return 2 if q == 1 else 1

    def tx_widths(self, q):
        """Output widths of the three TX-DNN linear layers at terminal q."""
        n = self.n_bits[q - 1]
        return (n, n, 2 * self.tx_antennas[q - 1])

    def sim_tx_width(self, q):
        return 2 * self.tx_units[q - 1]

    def sim_rx_width(self, q):
        return 2 * self.rx_units[q - 1]

    def channel_width(self, q):
        """Paired width of the field arriving at terminal q's receive side."""
        if self.rx_layers[q - 1] > 0:
            return 2 * self.rx_units[q - 1]
        return 2 * self.rx_antennas[q - 1]

    def rx_input(self, q):
        return 2 * self.rx_antennas[q - 1]

    def decoded_bits(self, q):
        """Terminal q decodes the other terminal's stream."""
        return self.n_bits[self.other(q) - 1]

    def rx_widths(self, q):
        n = self.decoded_bits(q)
        return (n, n)

    def layer_table(self, q):
        """(module, layer, width) rows of terminal q's physical pipeline."""
        rows = [("tx-dnn", "input", self.n_bits[q - 1])]
        for i, w in enumerate(self.tx_widths(q), 1):
            rows.append(("tx-dnn", f"linear_relu_{i}", w))
        rows.append(("tx-dnn", "power_control", 2 * self.tx_antennas[q - 1]))
        for layer in range(1, self.tx_layers[q - 1] + 1):
            rows.append(("tx-stack", f"transmission_{layer}", self.sim_tx_width(q)))
            rows.append(("tx-stack", f"metasurface_{layer}", self.sim_tx_width(q)))
        rows.append(("channel", "channel", self.channel_width(q)))
        for layer in range(self.rx_layers[q - 1], 0, -1):
            rows.append(("rx-stack", f"metasurface_{layer}", self.sim_rx_width(q)))
            width = self.rx_input(q) if layer == 1 else self.sim_rx_width(q)
            rows.append(("rx-stack", f"transmission_{layer}", width))
        rows.append(("rx-dnn", "batchnorm_1", self.rx_input(q)))
        n = self.decoded_bits(q)
        rows += [("rx-dnn", "linear_relu_1", n), ("rx-dnn", "batchnorm_2", n),
                 ("rx-dnn", "linear_relu_2", n), ("rx-dnn", "batchnorm_3", n),
                 ("rx-dnn", "sigmoid", n), ("rx-dnn", "output", n)]
        return rows


def build(config):
    """Derive and validate the architecture for a SystemConfig."""
    config.validate()
    geom = config.geometry
    t1, t2 = geom.terminals
    arch = EmnnArchitecture(
        n_bits=tuple(config.n_bits),
        tx_antennas=(t1.tx_antennas, t2.tx_antennas),
        rx_antennas=(t1.rx_antennas, t2.rx_antennas),
        tx_units=(t1.tx_units, t2.tx_units),
        rx_units=(t1.rx_units, t2.rx_units),
        tx_layers=(t1.tx_layers, t2.tx_layers),
        rx_layers=(t1.rx_layers, t2.rx_layers),
    )
    for q in (1, 2):
        for module, layer, width in arch.layer_table(q):
            if width < 1:
                raise ArchitectureError(
                    f"terminal {q}: {module}/{layer} has width {width}")
    return arch


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class TerminalParams:
    """Trainable state of one terminal."""

    def __init__(self):
        self.tx_w = []
        self.tx_b = []
        self.theta = []      # one vector per TX stack layer
        self.xi = []         # one vector per RX stack layer
        self.rx_w = []
        self.rx_b = []
        self.rx_gamma = []
        self.rx_beta = []
        self.rx_bn = []      # BatchNormState per batchnorm layer


class EmnnParams:
    """All trainable tensors plus batchnorm running statistics."""

    def __init__(self, terminals, power_logits=None):
        self.terminals = terminals
        self.power_logits = power_logits

    def terminal(self, q):
        return self.terminals[q - 1]

    def named_tensors(self):
        out = {}
        for q in (1, 2):
            tp = self.terminals[q - 1]
            for i, (w, b) in enumerate(zip(tp.tx_w, tp.tx_b)):
                out[f"t{q}.tx.w{i}"] = w
                out[f"t{q}.tx.b{i}"] = b
            for i, th in enumerate(tp.theta, 1):
                out[f"t{q}.theta{i}"] = th
            for i, xi in enumerate(tp.xi, 1):
                out[f"t{q}.xi{i}"] = xi
            for i, (w, b) in enumerate(zip(tp.rx_w, tp.rx_b)):
                out[f"t{q}.rx.w{i}"] = w
                out[f"t{q}.rx.b{i}"] = b
            for i, (g, b) in enumerate(zip(tp.rx_gamma, tp.rx_beta)):
                out[f"t{q}.rx_bn{i}.gamma"] = g
                out[f"t{q}.rx_bn{i}.beta"] = b
        if self.power_logits is not None:
            out["power.logits"] = self.power_logits
        return out

    def named_states(self):
        out = {}
        for q in (1, 2):
            for i, st in enumerate(self.terminals[q - 1].rx_bn):
                out[f"t{q}.rx_bn{i}"] = st
        return out

    def trainables(self):
        return list(self.named_tensors().values())

    def copy(self):
        clone = EmnnParams((TerminalParams(), TerminalParams()),
                           None if self.power_logits is None else
                           _clone(self.power_logits))
        for src, dst in zip(self.terminals, clone.terminals):
            dst.tx_w = [_clone(t) for t in src.tx_w]
            dst.tx_b = [_clone(t) for t in src.tx_b]
            dst.theta = [_clone(t) for t in src.theta]
            dst.xi = [_clone(t) for t in src.xi]
            dst.rx_w = [_clone(t) for t in src.rx_w]
            dst.rx_b = [_clone(t) for t in src.rx_b]
            dst.rx_gamma = [_clone(t) for t in src.rx_gamma]
            dst.rx_beta = [_clone(t) for t in src.rx_beta]
            dst.rx_bn = [st.copy() for st in src.rx_bn]
        return clone

    def exported_phases(self):
        """Phases wrapped to [0, 2 pi), keyed like named_tensors."""
        out = {}
        for q in (1, 2):
            tp = self.terminals[q - 1]
            for i, th in enumerate(tp.theta, 1):
                out[f"t{q}.theta{i}"] = wf.wrap_phase(th.data)
            for i, xi in enumerate(tp.xi, 1):
                out[f"t{q}.xi{i}"] = wf.wrap_phase(xi.data)
        return out


def _clone(t):
    out = ag.Tensor(t.data.copy(), requires_grad=t.requires_grad,
                    name=t.name, decay=t.decay)
    return out


def xavier_limit(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


# linear-layer biases start slightly positive: with zero biases and binary
# inputs, relu pre-activations sit exactly on their kink at initialization,
# whole layers die, and distinct bit patterns collapse onto one constellation
# point that gradients can never separate again
BIAS_INIT = 0.3


def init_params(arch, rng, trainable_power=False):
    """Xavier weights, small positive biases, uniform [0, 2 pi) phases."""
    terminals = (TerminalParams(), TerminalParams())
    for q in (1, 2):
        tp = terminals[q - 1]
        fan_in = arch.n_bits[q - 1]
        for i, width in enumerate(arch.tx_widths(q)):
            lim = xavier_limit(fan_in, width)
            tp.tx_w.append(ag.Tensor(rng.uniform(-lim, lim, (fan_in, width)),
                                     requires_grad=True, name=f"t{q}.tx.w{i}",
                                     decay=True))
            tp.tx_b.append(ag.Tensor(np.full(width, BIAS_INIT), requires_grad=True,
                                     name=f"t{q}.tx.b{i}"))
            fan_in = width
        for layer in range(1, arch.tx_layers[q - 1] + 1):
            tp.theta.append(ag.Tensor(rng.uniform(0.0, 2.0 * np.pi, arch.tx_units[q - 1]),
                                      requires_grad=True, name=f"t{q}.theta{layer}"))
        for layer in range(1, arch.rx_layers[q - 1] + 1):
            tp.xi.append(ag.Tensor(rng.uniform(0.0, 2.0 * np.pi, arch.rx_units[q - 1]),
                                   requires_grad=True, name=f"t{q}.xi{layer}"))
        fan_in = arch.rx_input(q)
        widths = arch.rx_widths(q)
        bn_widths = (arch.rx_input(q),) + widths
        for i, width in enumerate(bn_widths):
            tp.rx_gamma.append(ag.Tensor(np.ones(width), requires_grad=True,
                                         name=f"t{q}.rx_bn{i}.gamma"))
            tp.rx_beta.append(ag.Tensor(np.zeros(width), requires_grad=True,
                                        name=f"t{q}.rx_bn{i}.beta"))
            tp.rx_bn.append(ag.BatchNormState(width))
        for i, width in enumerate(widths):
            lim = xavier_limit(fan_in, width)
            tp.rx_w.append(ag.Tensor(rng.uniform(-lim, lim, (fan_in, width)),
                                     requires_grad=True, name=f"t{q}.rx.w{i}",
                                     decay=True))
            tp.rx_b.append(ag.Tensor(np.full(width, BIAS_INIT), requires_grad=True,
                                     name=f"t{q}.rx.b{i}"))
            fan_in = width
    logits = None
    if trainable_power:
        total = arch.tx_antennas[0] + arch.tx_antennas[1]
        logits = ag.Tensor(np.zeros(total), requires_grad=True, name="power.logits")
    return EmnnParams(terminals, logits)


# ---------------------------------------------------------------------------
# forward stages
# ---------------------------------------------------------------------------

def tx_dnn_forward(bits, tp):
    """Three linear+relu layers mapping a bit block to the raw antenna pairs."""
    x = bits if isinstance(bits, ag.Tensor) else ag.Tensor(np.asarray(bits, dtype=float))
    for w, b in zip(tp.tx_w, tp.tx_b):
        x = ag.relu(ag.add(ag.matmul(x, w), b))
    return x


def allocate_power(power_dbm, arch, params):
    """Per-antenna linear transmit powers for both terminals, (B, A_q) each.

    Default split: half the budget per terminal, uniform across its antennas.
    With trainable allocation the budget is shared through a softmax over all
    transmit antennas, so the total still sums to the per-sample budget.
    """
    p_lin = ch.dbm_to_watt(np.asarray(power_dbm, dtype=float)).reshape(-1, 1)
    a1, a2 = arch.tx_antennas
    if params.power_logits is None:
        p1 = np.broadcast_to(p_lin / (2.0 * a1), (p_lin.shape[0], a1))
        p2 = np.broadcast_to(p_lin / (2.0 * a2), (p_lin.shape[0], a2))
        return ag.Tensor(p1.copy()), ag.Tensor(p2.copy())
    share = ag.softmax(params.power_logits, axis=-1)
    full = ag.hadamard(ag.Tensor(p_lin), share)
    return ag.slice_axis(full, 1, 0, a1), ag.slice_axis(full, 1, a1, a2)


def power_control(raw, per_antenna_power, eps=POWER_EPS):
    """Fixed block enforcing the transmit power budget.

    Each complex antenna stream is normalized to unit mean power over the
    batch, then scaled by the square root of its allocated power, so the
    batch-mean total transmit power equals the (per-sample) budget.
    """
    n = raw.data.shape[1] // 2
    batch = raw.data.shape[0]
    re = ag.slice_axis(raw, 1, 0, n)
    im = ag.slice_axis(raw, 1, n, n)
    stream_power = ag.scale(ag.reduce_sum(
        ag.add(ag.hadamard(re, re), ag.hadamard(im, im)),
        axis=0, keepdims=True), 1.0 / batch)
    if np.any(stream_power.data < eps):
        warnings.warn("all-zero antenna stream in power control",
                      RuntimeWarning, stacklevel=2)
    inv_norm = ag.pow_scalar(ag.add(ag.pow_scalar(stream_power, 0.5), eps), -1.0)
    amp = ag.pow_scalar(per_antenna_power, 0.5)
    per_stream = ag.hadamard(amp, inv_norm)
    return ag.hadamard(raw, ag.concat([per_stream, per_stream], axis=1))


def tx_sim_forward(x, factor_pairs, thetas):
    """Alternate fixed transmission layers and trainable phase layers."""
    for (re, im), theta in zip(factor_pairs, thetas):
        x = ag.phase_diag_apply(theta, ag.complex_matmul(re, im, x))
    return x


def rx_sim_forward(y, factor_pairs, xis):
    """Receive stack: phase layer K first, transmission toward the antennas."""
    for (re, im), xi in zip(reversed(factor_pairs), reversed(xis)):
        y = ag.complex_matmul(re, im, ag.phase_diag_apply(xi, y))
    return y


def channel_layer(s1, s2, link_pairs):
    """Superpose cross-link and self-interference arrivals at both receivers.

    field_q = G_pq s_p + G_qq s_q; a fixed, non-trainable block. Receiver
    noise is injected after the receive stack (see Emnn.forward).
    """
    f1 = ag.add(ag.complex_matmul(*link_pairs[(1, 1)], s1),
                ag.complex_matmul(*link_pairs[(2, 1)], s2))
    f2 = ag.add(ag.complex_matmul(*link_pairs[(1, 2)], s1),
                ag.complex_matmul(*link_pairs[(2, 2)], s2))
    return f1, f2


def rx_dnn_forward(y, tp, training):
    """Batchnorm / linear+relu alternation closed by a sigmoid."""
    h = ag.batchnorm(y, tp.rx_gamma[0], tp.rx_beta[0], tp.rx_bn[0], training)
    h = ag.relu(ag.add(ag.matmul(h, tp.rx_w[0]), tp.rx_b[0]))
    h = ag.batchnorm(h, tp.rx_gamma[1], tp.rx_beta[1], tp.rx_bn[1], training)
    h = ag.relu(ag.add(ag.matmul(h, tp.rx_w[1]), tp.rx_b[1]))
    h = ag.batchnorm(h, tp.rx_gamma[2], tp.rx_beta[2], tp.rx_bn[2], training)
    return ag.sigmoid(h)


def hard_decision(soft):
    """Threshold soft bits at 0.5; exact ties map to 1."""
    soft = soft.data if isinstance(soft, ag.Tensor) else np.asarray(soft)
    return (soft >= 0.5).astype(np.int64)


def complex_to_pair_batch(matrix):
    """(B, n) complex -> (B, 2n) paired real."""
    matrix = np.asarray(matrix)
    return np.concatenate([matrix.real, matrix.imag], axis=-1).astype(float)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class Emnn:
    """Architecture + fixed propagation factors + trainable parameters."""

    def __init__(self, config, params=None, rng=None):
        self.config = config
        self.arch = build(config)
        geom = config.geometry
        self.tx_pairs = []
        self.rx_pairs = []
        self.tx_factors = []
        self.rx_factors = []
        for q in (1, 2):
            v = wf.build_tx_factors(geom, q)
            u = wf.build_rx_factors(geom, q)
            self.tx_factors.append(v)
            self.rx_factors.append(u)
            self.tx_pairs.append([wf.complex_to_pair(m) for m in v])
            self.rx_pairs.append([wf.complex_to_pair(m) for m in u])
        if params is None:
            if rng is None:
                raise ArchitectureError("either params or an rng is required")
            params = init_params(self.arch, rng, config.trainable_power)
        self.params = params
        # fixed receiver front-end gain: measure the antenna signal in units
        # of the noise standard deviation so batchnorm sees O(1) variances
        noise_var = ch.dbm_to_watt(config.channel.noise_dbm)
        self.rx_scale = 1.0 / np.sqrt(noise_var) if noise_var > 0 else 1.0

    def expected_link_shape(self, p, q):
        rows = self.arch.rx_units[q - 1] if self.arch.rx_layers[q - 1] > 0 \
            else self.arch.rx_antennas[q - 1]
        cols = self.arch.tx_units[p - 1] if self.arch.tx_layers[p - 1] > 0 \
            else self.arch.tx_antennas[p - 1]
        return (rows, cols)

    def check_realization(self, realization):
        for p, q in ch.LINK_ORDER:
            expect = self.expected_link_shape(p, q)
            got = realization.link(p, q).shape
            if got != expect:
                raise ArchitectureError(
                    f"link ({p},{q}) shape {got} does not match model {expect}")

    def forward(self, bits, power_dbm, realization, rng=None, training=True,
                noise=True, noise_override=None):
        """Soft estimates of the full bit block, aligned with [b1 | b2].

        `noise_override` takes pre-drawn complex noise (one array per
        terminal) so a caller can freeze the whole forward for gradient
        checks; otherwise receiver noise is drawn from `rng` when enabled.
        """
        self.check_realization(realization)
        bits = np.asarray(bits, dtype=float)
        n1 = self.arch.n_bits[0]
        link_pairs = {key: wf.complex_to_pair(realization.link(*key))
                      for key in ch.LINK_ORDER}

        sent = []
        p_alloc = allocate_power(power_dbm, self.arch, self.params)
        for q, p_q in zip((1, 2), p_alloc):
            tp = self.params.terminal(q)
            block = bits[:, :n1] if q == 1 else bits[:, n1:]
            raw = tx_dnn_forward(block, tp)
            x = power_control(raw, p_q)
            sent.append(tx_sim_forward(x, self.tx_pairs[q - 1], tp.theta))
        f1, f2 = channel_layer(sent[0], sent[1], link_pairs)

        received = []
        for q, f_q in zip((1, 2), (f1, f2)):
            tp = self.params.terminal(q)
            r_q = rx_sim_forward(f_q, self.rx_pairs[q - 1], tp.xi)
            if noise_override is not None:
                r_q = ag.add(r_q, complex_to_pair_batch(noise_override[q - 1]))
            elif noise:
                if rng is None:
                    raise ArchitectureError("noise requested but no rng given")
                n_q = ch.draw_noise(ch.dbm_to_watt(self.config.channel.noise_dbm),
                                    (bits.shape[0], self.arch.rx_antennas[q - 1]),
                                    rng)
                r_q = ag.add(r_q, complex_to_pair_batch(n_q))
            received.append(rx_dnn_forward(ag.scale(r_q, self.rx_scale), tp,
                                           training))
        # terminal 2 outputs the estimate of stream 1 and vice versa
        return ag.concat([received[1], received[0]], axis=1)


def export_phase_table(params):
    """Hardware-facing plain-text table: terminal, stack, layer, unit, phase."""
    lines = ["# terminal stack layer unit phase_rad"]
    for q in (1, 2):
        tp = params.terminal(q)
        for layer, th in enumerate(tp.theta, 1):
            for unit, value in enumerate(wf.wrap_phase(th.data)):
                lines.append(f"{q} tx {layer} {unit} {value:.12f}")
        for layer, xi in enumerate(tp.xi, 1):
            for unit, value in enumerate(wf.wrap_phase(xi.data)):
                lines.append(f"{q} rx {layer} {unit} {value:.12f}")
    return "\n".join(lines) + "\n"
