"""Monte Carlo BER evaluation: power sweeps, the no-stack baseline, and
experiment grids over layer count, unit count, and bit count.

Every emitted row carries the integer seed that reproduces it; rerun_row
replays the realization / fine-tune / evaluation pipeline for one row and
must match bit-exactly. Error counting is integer; the ratio is the only
float.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import config as cfg_mod
from . import emnn
from . import training
from .channel import ChannelSource, derive_seed


def ber(bits, decided):
    """(errors, total, ratio); the count is exact integer arithmetic."""
    bits = np.asarray(bits)
    decided = np.asarray(decided)
    if bits.shape != decided.shape:
        raise ValueError(f"length mismatch {bits.shape} vs {decided.shape}")
    errors = int((bits.astype(np.int64) != decided.astype(np.int64)).sum())
    total = int(bits.size)
    return errors, total, errors / total


@dataclass
class BerRow:
    label: str
    power_dbm: float
    realization: int
    seed: int
    bits: int
    errors: int
    ber: float


class BerReport:
    """Rows plus per-(label, power) aggregates, exportable to CSV/JSON."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def add(self, row):
        self.rows.append(row)

    def extend(self, rows):
        self.rows.extend(rows)

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.label, r.power_dbm, r.realization))

    def aggregates(self):
        groups = {}
        for row in self.rows:
            groups.setdefault((row.label, row.power_dbm), []).append(row.ber)
        out = []
        for (label, power), vals in sorted(groups.items()):
            out.append({
                "label": label,
                "power_dbm": power,
                "rows": len(vals),
                "mean_ber": float(np.mean(vals)),
                "median_ber": float(np.median(vals)),
            })
        return out

    def median_ber(self, label, power_dbm=None):
        vals = [r.ber for r in self.rows
                if r.label == label and (power_dbm is None or r.power_dbm == power_dbm)]
        return float(np.median(vals))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "power_dbm", "realization", "seed",
                             "bits", "errors", "ber"])
            for row in self.sorted_rows():
                writer.writerow([row.label, row.power_dbm, row.realization,
                                 row.seed, row.bits, row.errors, repr(row.ber)])

    def summary(self, config=None):
        doc = {"aggregates": self.aggregates(), "rows": len(self.rows)}
        if config is not None:
            doc["config_digest"] = config.digest()
            doc["config_label"] = config.label
        return doc

    def to_json(self, path, config=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(config), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(model, realization, power_dbm, test_scale, rng, batch_size=None):
    """BER of one model on one frozen realization at one power.

    Runs the forward in evaluation mode (batchnorm running statistics,
    receiver noise on), hard-decides, and counts errors over `test_scale`
    symbols. Deterministic for a fixed rng state.
    """
    if batch_size is None:
        batch_size = model.config.evaluation.eval_batch
    total_bits = model.config.total_bits
    errors = 0
    counted = 0
    remaining = int(test_scale)
    while remaining > 0:
        n = min(batch_size, remaining)
        if n < 2:
            n = min(2, test_scale)  # power normalization needs a batch
        bits = rng.integers(0, 2, (n, total_bits)).astype(float)
        soft = model.forward(bits, np.full(n, float(power_dbm)), realization,
                             rng=rng, training=False, noise=True)
        decided = emnn.hard_decision(soft)
        e, t, _ = ber(bits, decided)
        errors += e
        counted += t
        remaining -= n
    return errors, counted, errors / counted


def _eval_one_realization(base, source, index, master_seed, powers, test_scale,
                          label):
    config = source.config
    seed = derive_seed(master_seed, index)
    rng = np.random.default_rng(seed)
    realization = source.instantaneous(seed)
    tuned = training.finetune(base, realization, rng)
    model = emnn.Emnn(config, params=tuned.params)
    rows = []
    for power in powers:
        errors, bits, ratio = evaluate(model, realization, power, test_scale, rng)
        rows.append(BerRow(label, float(power), index, seed, bits, errors, ratio))
    return rows, tuned.diverged


def monte_carlo_eval(base, config=None, master_seed=None, label=None, threads=1):
    """Fine-tune and sweep the power grid over independent realizations.

    Each realization gets a derived seed covering its channel innovation,
    the fine-tune batches, and the evaluation symbols; a diverged fine-tune
    is recorded as failed rows (ber = nan) rather than dropped. The
    persistent channel component is anchored to the checkpoint's training
    seed, so rows reproduce from (config, row seed) alone.
    """
    config = base.config if config is None else config
    ev = config.evaluation
    master_seed = ev.seed if master_seed is None else master_seed
    label = config.label if label is None else label
    source = ChannelSource(config)
    report = BerReport()

    def run(index):
        return _eval_one_realization(base, source, index, master_seed,
                                     ev.power_sweep_dbm, ev.test_scale, label)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(ev.monte_carlo)))
    else:
        results = [run(i) for i in range(ev.monte_carlo)]
    for rows, diverged in results:
        if diverged:
            rows = [BerRow(r.label, r.power_dbm, r.realization, r.seed,
                           r.bits, r.errors, float("nan")) for r in rows]
        report.extend(rows)
    report.rows = report.sorted_rows()
    return report


def rerun_row(base, row, config=None):
    """Replay one report row from its recorded seed; must reproduce exactly."""
    config = base.config if config is None else config
    source = ChannelSource(config)
    rng = np.random.default_rng(row.seed)
    realization = source.instantaneous(row.seed)
    tuned = training.finetune(base, realization, rng)
    model = emnn.Emnn(config, params=tuned.params)
    for power in config.evaluation.power_sweep_dbm:
        errors, bits, ratio = evaluate(model, realization, power,
                                       config.evaluation.test_scale, rng)
        if float(power) == row.power_dbm:
            return BerRow(row.label, row.power_dbm, row.realization, row.seed,
                          bits, errors, ratio)
    raise ValueError(f"power {row.power_dbm} not in the configured sweep")


def baseline_conventional(config):
    """Derived configuration with no stacks: antennas couple directly."""
    out = cfg_mod.with_layers(config, 0)
    return cfg_mod.SystemConfig(
        n_bits=out.n_bits, geometry=out.geometry, channel=out.channel,
        training=out.training, evaluation=out.evaluation,
        trainable_power=out.trainable_power,
        label=f"{config.label}-conventional").validate()


def sweep_configs(kind, grid, base_config):
    """Config per grid point for a named sweep family."""
    if kind == "layers":
        return [cfg_mod.with_layers(base_config, int(v)) for v in grid]
    if kind == "units":
        return [cfg_mod.with_unit_grid(base_config, v) for v in grid]
    if kind == "bits":
        return [cfg_mod.with_bits(base_config, v) for v in grid]
    if kind == "power":
        return [base_config]
    raise ValueError(f"unknown sweep kind {kind!r}")


def run_sweep(kind, grid, base_config, master_seed=None, threads=1):
    """Train and evaluate one model per grid point; emit a combined report.

    Per-point failures are recorded (nan rows) and the sweep continues.
    """
    report = BerReport()
    for config in sweep_configs(kind, grid, base_config):
        try:
            base = training.train_base(config)
            point = monte_carlo_eval(base, config, master_seed=master_seed,
                                     threads=threads)
            report.extend(point.rows)
        except (training.TrainingDiverged, emnn.ArchitectureError):
            for power in config.evaluation.power_sweep_dbm:
                report.add(BerRow(config.label, float(power), -1, -1, 0, 0,
                                  float("nan")))
    report.rows = report.sorted_rows()
    return report
