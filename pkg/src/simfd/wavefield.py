"""Deterministic metasurface-stack geometry and Rayleigh-Sommerfeld propagation.

A terminal carries a TX stack and an RX stack of programmable layers. The
antenna array is modeled as layer 0 of each stack (same element spacing as
the EM units); layer l sits in the plane z = l * layer_spacing of the
stack's local frame. All functions here are pure, double precision, and
deterministic for a fixed geometry.
"""

from dataclasses import dataclass

import numpy as np

C_LIGHT = 299792458.0


class GeometryError(ValueError):
    """Invalid geometry or a singular (coincident-point) configuration."""


@dataclass(frozen=True)
class TerminalLayout:
    """Grid sizes and layer counts for one terminal; 0 layers = no stack."""

    tx_antenna_grid: tuple  # (nx, ny)
    rx_antenna_grid: tuple
    tx_unit_grid: tuple
    rx_unit_grid: tuple
    tx_layers: int
    rx_layers: int

    @property
    def tx_antennas(self):
        return self.tx_antenna_grid[0] * self.tx_antenna_grid[1]

    @property
    def rx_antennas(self):
        return self.rx_antenna_grid[0] * self.rx_antenna_grid[1]

    @property
    def tx_units(self):
        return self.tx_unit_grid[0] * self.tx_unit_grid[1]

    @property
    def rx_units(self):
        return self.rx_unit_grid[0] * self.rx_unit_grid[1]

    def validate(self):
        for grid in (self.tx_antenna_grid, self.rx_antenna_grid,
                     self.tx_unit_grid, self.rx_unit_grid):
            if len(grid) != 2 or min(grid) < 1:
                raise GeometryError(f"grid dimensions must be >= 1, got {grid}")
        if self.tx_layers < 0 or self.rx_layers < 0:
            raise GeometryError("layer counts must be >= 0")


@dataclass(frozen=True)
class GeometryConfig:
    """Frequency, spacings and per-terminal layouts of both stacks.

    unit_spacing / layer_spacing of None default to half a wavelength.
    An explicit wavelength must satisfy frequency * wavelength = light_speed
    to 1e-6 relative.
    """

    frequency: float
    terminals: tuple  # (TerminalLayout, TerminalLayout)
    light_speed: float = C_LIGHT
    unit_spacing: float = None
    layer_spacing: float = None
    wavelength_override: float = None

    @property
    def wavelength(self):
        if self.wavelength_override is not None:
            return self.wavelength_override
        return self.light_speed / self.frequency

    @property
    def spacing(self):
        return self.unit_spacing if self.unit_spacing is not None else self.wavelength / 2.0

    @property
    def layer_gap(self):
        return self.layer_spacing if self.layer_spacing is not None else self.wavelength / 2.0

    @property
    def unit_area(self):
        return self.spacing ** 2

    def terminal(self, q):
        return self.terminals[q - 1]

    def validate(self):
        if self.frequency <= 0:
            raise GeometryError("frequency must be positive")
        if self.wavelength_override is not None:
            rel = abs(self.frequency * self.wavelength_override - self.light_speed)
            if rel > 1e-6 * self.light_speed:
                raise GeometryError("frequency * wavelength != light speed")
        if self.spacing <= 0 or self.layer_gap <= 0:
            raise GeometryError("spacings must be positive")
        if len(self.terminals) != 2:
            raise GeometryError("exactly two terminals expected")
        for t in self.terminals:
            t.validate()


def unit_positions(nx, ny, spacing, layer_index=0, layer_spacing=0.0):
    """Element centers of a centered nx-by-ny grid at z = layer_index * spacing.

    Returns an (nx*ny, 3) array, x index running fastest; the grid centroid
    is (0, 0, layer_index * layer_spacing).
    """
    if nx < 1 or ny < 1:
        raise GeometryError("grid dimensions must be >= 1")
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    xs = (np.arange(nx) - (nx - 1) / 2.0) * spacing
    ys = (np.arange(ny) - (ny - 1) / 2.0) * spacing
    out = np.zeros((nx * ny, 3))
    out[:, 0] = np.tile(xs, ny)
    out[:, 1] = np.repeat(ys, nx)
    out[:, 2] = layer_index * layer_spacing
    return out


def diffraction_coefficient(src, dst, frequency, unit_area, light_speed=C_LIGHT):
    """Rayleigh-Sommerfeld transmission coefficient between two unit centers.

    (S cos(chi) / r) * (1/(2 pi r) - j f/c) * exp(j 2 pi r f / c), with r the
    Euclidean distance and chi the angle to the source layer's normal (z).
    """
    if unit_area <= 0:
        raise GeometryError("unit area must be positive")
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    r = float(np.sqrt((d * d).sum()))
    if r == 0.0:
        raise GeometryError("coincident source and destination units")
    cos_chi = abs(d[2]) / r
    return (unit_area * cos_chi / r) * (1.0 / (2.0 * np.pi * r) - 1j * frequency / light_speed) \
        * np.exp(1j * 2.0 * np.pi * r * frequency / light_speed)


def transmission_matrix(prev_positions, next_positions, frequency, unit_area,
                        light_speed=C_LIGHT):
    """Layer-to-layer coefficient matrix, shape (len(next), len(prev)).

    Entry (m, m~) is diffraction_coefficient(prev[m~], next[m]).
    """
    prev_positions = np.asarray(prev_positions, dtype=float)
    next_positions = np.asarray(next_positions, dtype=float)
    if prev_positions.size == 0 or next_positions.size == 0:
        raise GeometryError("empty position list")
    if unit_area <= 0:
        raise GeometryError("unit area must be positive")
    diff = next_positions[:, None, :] - prev_positions[None, :, :]
    r = np.sqrt((diff * diff).sum(axis=2))
    if (r == 0.0).any():
        raise GeometryError("coincident units across layers")
    cos_chi = np.abs(diff[:, :, 2]) / r
    return (unit_area * cos_chi / r) * (1.0 / (2.0 * np.pi * r) - 1j * frequency / light_speed) \
        * np.exp(1j * 2.0 * np.pi * r * frequency / light_speed)


def phase_mask(phases, size):
    """Diagonal unit-modulus matrix diag(exp(j * phases))."""
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (size,):
        raise GeometryError(f"phase vector length {phases.shape} != {size}")
    if not np.isfinite(phases).all():
        raise GeometryError("non-finite phase entries")
    return np.diag(np.exp(1j * phases))


def wrap_phase(phases):
    """Canonicalize phases into [0, 2 pi) for export."""
    return np.mod(np.asarray(phases, dtype=float), 2.0 * np.pi)


@dataclass
class SimOperator:
    """One stack: ordered fixed transmission matrices plus current phases.

    TX side stores [V_1 .. V_L] and phases [theta_1 .. theta_L];
    RX side stores [U_1 .. U_K] and phases [xi_1 .. xi_K].
    antenna_count gives the pass-through size when the stack has no layers.
    """

    side: str
    terminal: int
    matrices: list
    phases: list
    antenna_count: int

    def validate(self):
        if self.side not in ("tx", "rx"):
            raise GeometryError(f"unknown side {self.side!r}")
        if len(self.matrices) != len(self.phases):
            raise GeometryError("one phase vector per transmission matrix required")
        if self.side == "tx":
            # applied V_1 .. V_L; phase l follows V_l (length = its row count)
            size = self.antenna_count
            for mat, ph in zip(self.matrices, self.phases):
                if mat.shape[1] != size:
                    raise GeometryError(
                        f"chain dimension mismatch: {mat.shape} after size {size}")
                size = mat.shape[0]
                if ph.shape != (size,):
                    raise GeometryError(f"phase length {ph.shape} != layer size {size}")
        else:
            # applied U_K .. U_1; phase k precedes U_k (length = its col count)
            prev_rows = None
            for k in range(len(self.matrices), 0, -1):
                mat, ph = self.matrices[k - 1], self.phases[k - 1]
                if ph.shape != (mat.shape[1],):
                    raise GeometryError(
                        f"phase length {ph.shape} != layer size {mat.shape[1]}")
                if prev_rows is not None and mat.shape[1] != prev_rows:
                    raise GeometryError(
                        f"chain dimension mismatch: {mat.shape} after size {prev_rows}")
                prev_rows = mat.shape[0]
            if self.matrices and self.matrices[0].shape[0] != self.antenna_count:
                raise GeometryError(
                    f"chain does not end at the antenna plane: {self.matrices[0].shape}")


def tx_propagation(sim):
    """Dense TX operator Phi_L V_L ... Phi_1 V_1 (identity when L = 0)."""
    if sim.side != "tx":
        raise GeometryError("tx_propagation needs a TX-side operator")
    sim.validate()
    acc = np.eye(sim.antenna_count, dtype=complex)
    for mat, ph in zip(sim.matrices, sim.phases):
        acc = np.exp(1j * ph)[:, None] * (mat @ acc)
    return acc


def rx_propagation(sim):
    """Dense RX operator U_1 Psi_1 ... U_K Psi_K (identity when K = 0)."""
    if sim.side != "rx":
        raise GeometryError("rx_propagation needs an RX-side operator")
    sim.validate()
    if not sim.matrices:
        return np.eye(sim.antenna_count, dtype=complex)
    width = sim.matrices[-1].shape[1]
    acc = np.eye(width, dtype=complex)
    for mat, ph in zip(reversed(sim.matrices), reversed(sim.phases)):
        acc = mat @ (np.exp(1j * ph)[:, None] * acc)
    return acc


# ---------------------------------------------------------------------------
# builders from a GeometryConfig
# ---------------------------------------------------------------------------

def tx_layer_positions(geom, q, layer):
    """Positions of TX layer `layer` at terminal q (layer 0 = antenna array)."""
    term = geom.terminal(q)
    grid = term.tx_antenna_grid if layer == 0 else term.tx_unit_grid
    return unit_positions(grid[0], grid[1], geom.spacing, layer, geom.layer_gap)


def rx_layer_positions(geom, q, layer):
    """Positions of RX layer `layer` at terminal q (layer 0 = antenna array)."""
    term = geom.terminal(q)
    grid = term.rx_antenna_grid if layer == 0 else term.rx_unit_grid
    return unit_positions(grid[0], grid[1], geom.spacing, layer, geom.layer_gap)


def build_tx_factors(geom, q):
    """Fixed TX transmission matrices [V_1 .. V_L] for terminal q."""
    term = geom.terminal(q)
    factors = []
    for layer in range(1, term.tx_layers + 1):
        prev = tx_layer_positions(geom, q, layer - 1)
        nxt = tx_layer_positions(geom, q, layer)
        factors.append(transmission_matrix(prev, nxt, geom.frequency,
                                           geom.unit_area, geom.light_speed))
    return factors


def build_rx_factors(geom, q):
    """Fixed RX transmission matrices [U_1 .. U_K] for terminal q.

    U_k maps layer k to layer k-1, so U_1 lands on the antenna array.
    """
    term = geom.terminal(q)
    factors = []
    for layer in range(1, term.rx_layers + 1):
        src = rx_layer_positions(geom, q, layer)
        dst = rx_layer_positions(geom, q, layer - 1)
        factors.append(transmission_matrix(src, dst, geom.frequency,
                                           geom.unit_area, geom.light_speed))
    return factors


def tx_operator(geom, q, phases):
    """Assemble the TX SimOperator for terminal q from raw phase vectors."""
    term = geom.terminal(q)
    return SimOperator("tx", q, build_tx_factors(geom, q),
                       [wrap_phase(p) for p in phases], term.tx_antennas)


def rx_operator(geom, q, phases):
    """Assemble the RX SimOperator for terminal q from raw phase vectors."""
    term = geom.terminal(q)
    return SimOperator("rx", q, build_rx_factors(geom, q),
                       [wrap_phase(p) for p in phases], term.rx_antennas)


def complex_to_pair(matrix):
    """Split a complex matrix into its (real, imag) float64 planes."""
    matrix = np.asarray(matrix)
    return np.ascontiguousarray(matrix.real, dtype=float), \
        np.ascontiguousarray(matrix.imag, dtype=float)


def pair_to_complex(re, im):
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    if re.shape != im.shape:
        raise GeometryError("real and imaginary planes must share a shape")
    return re + 1j * im
