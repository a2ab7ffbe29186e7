"""Correlated Rayleigh channel synthesis with path loss, shadowing and noise.

Links between the stacks of the two terminals follow a Kronecker model:
G = R_rx^{1/2} Gtilde R_tx^{1/2}, with sinc spatial correlation on each
layer grid, log-distance path loss applied as an amplitude factor, and
i.i.d. circularly symmetric fading. All randomness flows through explicitly
passed numpy Generators; a realization is reproducible from (config, seed).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import wavefield

# fixed rng consumption order inside realize_channels
LINK_ORDER = ((1, 1), (1, 2), (2, 1), (2, 2))

# derivation tag of the persistent channel component of an experiment
NOMINAL_TAG = 0x534F5552


class ChannelError(ValueError):
    """Invalid channel parameters or non-conforming shapes."""


def derive_seed(master, index):
    """Independent child seed `index` of experiment seed `master`."""
    seq = np.random.SeedSequence([int(master), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PathLossParams:
    """Log-distance path loss inputs; `exponent` is the path-loss exponent."""

    distance: float
    reference_distance: float = 1.0
    exponent: float = 3.5
    shadowing_db: float = 0.0

    def validate(self):
        if self.reference_distance <= 0:
            raise ChannelError("reference distance must be positive")
        if self.distance < self.reference_distance:
            raise ChannelError("distance below the reference distance")
        if self.exponent <= 0:
            raise ChannelError("path loss exponent must be positive")
        if self.shadowing_db < 0:
            raise ChannelError("shadowing std must be >= 0")


@dataclass(frozen=True)
class NoiseParams:
    """Receiver noise power; dBm on the wire, linear watts internally."""

    power_dbm: float

    @property
    def power_linear(self):
        return dbm_to_watt(self.power_dbm)


@dataclass
class CorrelationMatrices:
    """Per-terminal spatial correlation on the channel-facing layers."""

    tx: np.ndarray        # M_q x M_q, TX stack's last layer grid
    rx: np.ndarray        # N_q x N_q, RX stack's outermost layer grid
    tx_sqrt: np.ndarray
    rx_sqrt: np.ndarray


@dataclass
class ChannelRealization:
    """One draw of the four link matrices, with the gains that scaled them.

    links[(p, q)] has shape N_q x M_p (receiver rows, transmitter columns);
    gains[(p, q)] is the applied linear amplitude 10^(-PL/20).
    """

    links: dict
    gains: dict
    seed: int
    mode: str  # "statistical" | "instantaneous"

    def link(self, p, q):
        return self.links[(p, q)]

    def validate(self):
        if self.mode not in ("statistical", "instantaneous"):
            raise ChannelError(f"unknown mode {self.mode!r}")
        for key in LINK_ORDER:
            g = self.links[key]
            if not np.isfinite(g).all():
                raise ChannelError(f"non-finite entries in link {key}")
            if self.gains[key] <= 0:
                raise ChannelError(f"non-positive gain on link {key}")


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def spatial_correlation(positions, wavelength):
    """sinc(2 d / wavelength) correlation over one layer's unit positions."""
    positions = np.asarray(positions, dtype=float)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    return np.sinc(2.0 * dist / wavelength)


def psd_sqrt(matrix, symmetry_tol=1e-10, clip_tol=1e-12):
    """Symmetric PSD square root with negative eigenvalues clipped to zero."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ChannelError("square matrix expected")
    if np.abs(matrix - matrix.T).max() > symmetry_tol:
        raise ChannelError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.where(vals > clip_tol, vals, np.maximum(vals, 0.0))
    root = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    return (root + root.T) / 2.0


def draw_iid_rayleigh(rows, cols, rng):
    """i.i.d. circularly symmetric complex Gaussian entries, unit variance."""
    re = rng.standard_normal((rows, cols))
    im = rng.standard_normal((rows, cols))
    return (re + 1j * im) / np.sqrt(2.0)


def correlated_channel(rx_sqrt, iid, tx_sqrt):
    """Kronecker-correlated channel: rx_sqrt @ iid @ tx_sqrt."""
    rx_sqrt = np.asarray(rx_sqrt)
    tx_sqrt = np.asarray(tx_sqrt)
    iid = np.asarray(iid)
    if rx_sqrt.shape[1] != iid.shape[0] or iid.shape[1] != tx_sqrt.shape[0]:
        raise ChannelError(
            f"non-conforming shapes {rx_sqrt.shape} {iid.shape} {tx_sqrt.shape}")
    return rx_sqrt @ iid @ tx_sqrt


def path_loss_db(params, wavelength, rng=None, shadow_db=None):
    """PL(D) = 20 log10(4 pi D0 / lambda) + 10 b log10(D / D0) + X.

    X is the shadowing term: `shadow_db` if given, otherwise one N(0, std^2)
    draw from `rng` when the configured std is positive, else 0.
    """
    params.validate()
    if shadow_db is None:
        if params.shadowing_db > 0 and rng is not None:
            shadow_db = params.shadowing_db * rng.standard_normal()
        else:
            shadow_db = 0.0
    pl0 = 20.0 * np.log10(4.0 * np.pi * params.reference_distance / wavelength)
    return pl0 + 10.0 * params.exponent * np.log10(
        params.distance / params.reference_distance) + shadow_db


def draw_noise(variance_linear, size, rng):
    """Complex Gaussian noise, variance `variance_linear` per entry."""
    if variance_linear < 0:
        raise ChannelError("noise variance must be >= 0")
    if variance_linear == 0.0:
        return np.zeros(size, dtype=complex)
    std = np.sqrt(variance_linear / 2.0)
    return std * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@lru_cache(maxsize=16)
def correlation_bundle(geom):
    """Correlation matrices and PSD roots for both terminals (cached).

    The TX side uses the TX stack's unit grid (the antenna grid when the
    stack has no layers); the RX side mirrors that for the RX stack.
    """
    out = {}
    lam = geom.wavelength
    for q in (1, 2):
        term = geom.terminal(q)
        tx_grid = term.tx_unit_grid if term.tx_layers > 0 else term.tx_antenna_grid
        rx_grid = term.rx_unit_grid if term.rx_layers > 0 else term.rx_antenna_grid
        tx_pos = wavefield.unit_positions(tx_grid[0], tx_grid[1], geom.spacing)
        rx_pos = wavefield.unit_positions(rx_grid[0], rx_grid[1], geom.spacing)
        r_tx = spatial_correlation(tx_pos, lam)
        r_rx = spatial_correlation(rx_pos, lam)
        out[q] = CorrelationMatrices(r_tx, r_rx, psd_sqrt(r_tx), psd_sqrt(r_rx))
    return out


def realize_channels(config, rng, mode, seed=-1):
    """Draw all four link matrices of a SystemConfig.

    Cross links (1,2) and (2,1) use the terminal separation distance and the
    configured shadowing; self-interference links (1,1) and (2,2) use the SI
    distance, SI shadowing, and the extra SI isolation. rng consumption order
    is fixed: links in LINK_ORDER, per link one shadowing draw (only when
    that link's shadowing std is positive) then the fading matrix.
    """
    geom = config.geometry
    chan = config.channel
    corr = correlation_bundle(geom)
    links, gains = {}, {}
    for p, q in LINK_ORDER:
        cross = p != q
        # SI links closer than the reference distance fall back to free-space
        # loss at their actual distance (reference = distance, exponent moot)
        ref = chan.reference_distance if cross \
            else min(chan.reference_distance, chan.si_distance)
        params = PathLossParams(
            distance=chan.distance if cross else chan.si_distance,
            reference_distance=ref,
            exponent=chan.path_loss_exponent,
            shadowing_db=chan.shadowing_db if cross else chan.si_shadowing_db)
        pl = path_loss_db(params, geom.wavelength, rng=rng)
        if not cross:
            pl += chan.si_isolation_db
        gain = 10.0 ** (-pl / 20.0)
        tx_side = corr[p].tx_sqrt
        rx_side = corr[q].rx_sqrt
        iid = draw_iid_rayleigh(rx_side.shape[0], tx_side.shape[0], rng)
        links[(p, q)] = gain * correlated_channel(rx_side, iid, tx_side)
        gains[(p, q)] = gain
    out = ChannelRealization(links, gains, seed, mode)
    out.validate()
    return out


def mix_realizations(nominal, fresh, coherence, si_coherence):
    """Quasi-static composition: persistent component plus fresh innovation.

    Per link, G = sqrt(rho) G_nominal + sqrt(1 - rho) G_fresh with rho the
    cross-link coherence (si_coherence on the self-interference links);
    unit fading variance is preserved. rho = 0 returns the fresh draw
    unchanged, rho = 1 pins the link to the persistent component.
    """
    for rho in (coherence, si_coherence):
        if not 0.0 <= rho <= 1.0:
            raise ChannelError("coherence must lie in [0, 1]")
    links, gains = {}, {}
    for key in LINK_ORDER:
        rho = si_coherence if key[0] == key[1] else coherence
        links[key] = np.sqrt(rho) * nominal.links[key] \
            + np.sqrt(1.0 - rho) * fresh.links[key]
        gains[key] = fresh.gains[key] if rho < 1.0 else nominal.gains[key]
    out = ChannelRealization(links, gains, fresh.seed, fresh.mode)
    out.validate()
    return out


class ChannelSource:
    """Channel draws of one experiment, anchored to a persistent component.

    The nominal realization (derived from the experiment seed) models the
    quasi-static part of the environment: the self-interference geometry and
    the slowly varying portion of the cross links. Statistical draws redraw
    the innovation around it every call (base training); instantaneous draws
    freeze one innovation per index (fine-tuning and evaluation).
    """

    def __init__(self, config, master_seed=None):
        config.validate()
        self.config = config
        self.master_seed = config.training.seed if master_seed is None \
            else master_seed
        nominal_seed = derive_seed(self.master_seed, NOMINAL_TAG)
        self.nominal = realize_channels(
            config, np.random.default_rng(nominal_seed), "statistical",
            seed=nominal_seed)

    def _mix(self, fresh):
        chan = self.config.channel
        return mix_realizations(self.nominal, fresh, chan.coherence,
                                chan.si_coherence)

    def statistical(self, rng):
        """Fresh innovation around the persistent component (redraw per batch)."""
        return self._mix(realize_channels(self.config, rng, "statistical",
                                          seed=self.master_seed))

    def instantaneous(self, seed):
        """One frozen realization reproducible from its innovation seed."""
        rng = np.random.default_rng(seed)
        return self._mix(realize_channels(self.config, rng, "instantaneous",
                                          seed=seed))
