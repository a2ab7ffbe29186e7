import csv
import json

import numpy as np
import pytest

import simfd.cli as cli
import simfd.emnn as emnn
import simfd.evaluation as ev
import simfd.training as training
from dataclasses import replace
from simfd.channel import ChannelSource
from simfd.config import miniature_config, save_config


@pytest.fixture(scope="module")
def quick_config():
    cfg = miniature_config(seed=21)
    return replace(
        cfg,
        training=replace(cfg.training, epochs=40, restarts=1, batch_size=64,
                         finetune_epochs=5),
        evaluation=replace(cfg.evaluation, monte_carlo=2, test_scale=600,
                           power_sweep_dbm=(20.0, 30.0), eval_batch=256),
    ).validate()


@pytest.fixture(scope="module")
def quick_base(quick_config):
    return training.train_base(quick_config)


class TestBer:
    def test_equal_vectors(self):
        assert ev.ber(np.ones(10), np.ones(10)) == (0, 10, 0.0)

    def test_all_flipped(self):
        assert ev.ber(np.ones(8), np.zeros(8)) == (8, 8, 1.0)

    def test_direct_count(self):
        b = np.zeros(20)
        d = b.copy()
        d[[3, 7, 11]] = 1
        errors, total, ratio = ev.ber(b, d)
        assert (errors, total) == (3, 20)
        assert ratio == 0.15

    def test_integer_exactness(self):
        rng = np.random.default_rng(0)
        b = rng.integers(0, 2, (50, 8))
        d = rng.integers(0, 2, (50, 8))
        errors, total, ratio = ev.ber(b, d)
        assert isinstance(errors, int) and isinstance(total, int)
        assert ratio == errors / total

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ev.ber(np.ones(3), np.ones(4))


class TestEvaluate:
    def test_untrained_model_is_chance_level(self, quick_config):
        model = emnn.Emnn(quick_config, rng=np.random.default_rng(3))
        real = ChannelSource(quick_config).instantaneous(1)
        _, _, ratio = ev.evaluate(model, real, 30.0, 10000,
                                  np.random.default_rng(4))
        assert abs(ratio - 0.5) < 0.05

    def test_seed_determinism(self, quick_base, quick_config):
        model = emnn.Emnn(quick_config, params=quick_base.params)
        real = ChannelSource(quick_config).instantaneous(1)
        a = ev.evaluate(model, real, 20.0, 500, np.random.default_rng(5))
        b = ev.evaluate(model, real, 20.0, 500, np.random.default_rng(5))
        assert a == b

    def test_counts_cover_test_scale(self, quick_base, quick_config):
        model = emnn.Emnn(quick_config, params=quick_base.params)
        real = ChannelSource(quick_config).instantaneous(1)
        errors, bits, _ = ev.evaluate(model, real, 20.0, 777,
                                      np.random.default_rng(6))
        assert bits == 777 * quick_config.total_bits


class TestMonteCarlo:
    def test_row_counts_and_aggregates(self, quick_base, quick_config):
        report = ev.monte_carlo_eval(quick_base)
        evc = quick_config.evaluation
        assert len(report.rows) == evc.monte_carlo * len(evc.power_sweep_dbm)
        aggs = report.aggregates()
        assert len(aggs) == len(evc.power_sweep_dbm)
        for agg in aggs:
            rows = [r.ber for r in report.rows
                    if r.power_dbm == agg["power_dbm"]]
            assert agg["mean_ber"] == pytest.approx(np.mean(rows))
            assert agg["median_ber"] == pytest.approx(np.median(rows))

    def test_single_realization_degenerates_to_finetune_evaluate(
            self, quick_base, quick_config):
        cfg = replace(quick_config,
                      evaluation=replace(quick_config.evaluation,
                                         monte_carlo=1)).validate()
        report = ev.monte_carlo_eval(quick_base, cfg)
        assert len(report.rows) == len(cfg.evaluation.power_sweep_dbm)

    def test_rows_carry_reproducing_seed(self, quick_base):
        report = ev.monte_carlo_eval(quick_base)
        row = report.rows[0]
        again = ev.rerun_row(quick_base, row)
        assert again.errors == row.errors
        assert again.bits == row.bits
        assert again.ber == row.ber

    def test_threads_match_sequential(self, quick_base):
        seq = ev.monte_carlo_eval(quick_base, threads=1)
        par = ev.monte_carlo_eval(quick_base, threads=2)
        assert [(r.seed, r.errors) for r in seq.rows] == \
            [(r.seed, r.errors) for r in par.rows]


class TestReportFormats:
    def test_csv_header_and_rows(self, quick_base, tmp_path):
        report = ev.monte_carlo_eval(quick_base)
        path = tmp_path / "rows.csv"
        report.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["label", "power_dbm", "realization", "seed",
                           "bits", "errors", "ber"]
        assert len(rows) - 1 == len(report.rows)
        for row in rows[1:]:
            assert int(row[5]) <= int(row[4])

    def test_json_summary(self, quick_base, quick_config, tmp_path):
        report = ev.monte_carlo_eval(quick_base)
        path = tmp_path / "summary.json"
        report.to_json(path, quick_config)
        doc = json.loads(path.read_text())
        assert doc["config_digest"] == quick_config.digest()
        assert doc["rows"] == len(report.rows)


class TestBaselineConventional:
    def test_layers_removed(self, quick_config):
        base = ev.baseline_conventional(quick_config)
        for t in base.geometry.terminals:
            assert t.tx_layers == 0 and t.rx_layers == 0

    def test_channel_shapes_are_antenna_sized(self, quick_config):
        base = ev.baseline_conventional(quick_config)
        real = ChannelSource(base).instantaneous(0)
        # A_2^rx x A_1^tx for the link 1 -> 2
        assert real.link(1, 2).shape == (4, 4)

    def test_no_phase_parameters(self, quick_config):
        base = ev.baseline_conventional(quick_config)
        params = emnn.init_params(emnn.build(base), np.random.default_rng(0))
        names = params.named_tensors()
        assert not any(".theta" in n or ".xi" in n for n in names)

    def test_dnn_heads_shared_with_sim_config(self, quick_config):
        sim_names = set(emnn.init_params(emnn.build(quick_config),
                                         np.random.default_rng(0)).named_tensors())
        base = ev.baseline_conventional(quick_config)
        base_names = set(emnn.init_params(emnn.build(base),
                                          np.random.default_rng(0)).named_tensors())
        phase = {n for n in sim_names if ".theta" in n or ".xi" in n}
        assert sim_names - phase == base_names

    def test_config_diff_touches_only_stack_sections(self, quick_config):
        a = quick_config.to_dict()
        b = ev.baseline_conventional(quick_config).to_dict()
        assert a["channel"] == b["channel"]
        assert a["training"] == b["training"]
        assert a["evaluation"] == b["evaluation"]
        assert a["system"]["bits"] == b["system"]["bits"]
        for ta, tb in zip(a["sim"]["terminals"], b["sim"]["terminals"]):
            diff = {k for k in ta if ta[k] != tb[k]}
            assert diff == {"tx_layers", "rx_layers"}

    def test_trains_and_evaluates(self, quick_config):
        base_cfg = ev.baseline_conventional(quick_config)
        ck = training.train_base(base_cfg)
        report = ev.monte_carlo_eval(ck)
        assert len(report.rows) > 0


class TestRunSweep:
    def test_layers_sweep_produces_labelled_curves(self, quick_config):
        cfg = replace(quick_config,
                      training=replace(quick_config.training, epochs=10),
                      evaluation=replace(quick_config.evaluation, monte_carlo=1,
                                         test_scale=200)).validate()
        report = ev.run_sweep("layers", [1, 2], cfg)
        labels = {r.label for r in report.rows}
        assert len(labels) == 2
        assert len(report.rows) == 2 * len(cfg.evaluation.power_sweep_dbm)

    def test_bits_sweep_changes_only_heads(self, quick_config):
        configs = ev.sweep_configs("bits", [(4, 4), (2, 2)], quick_config)
        assert configs[0].geometry == configs[1].geometry
        assert configs[1].n_bits == (2, 2)

    def test_units_sweep_follows_width_rules(self, quick_config):
        configs = ev.sweep_configs("units", [(4, 4), (6, 6)], quick_config)
        archs = [emnn.build(c) for c in configs]
        assert archs[0].sim_tx_width(1) == 2 * 16
        assert archs[1].sim_tx_width(1) == 2 * 36

    def test_unknown_kind(self, quick_config):
        with pytest.raises(ValueError):
            ev.sweep_configs("nonsense", [1], quick_config)


class TestCli:
    def test_missing_config_file_is_usage_error(self, capsys):
        code = cli.main(["train-base", "--config", "/nonexistent/config.json"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_json_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["train-base", "--config", str(bad)]) == 2

    def test_gradcheck_mini_passes(self, capsys):
        code = cli.main(["gradcheck", "--config", "mini"])
        out = capsys.readouterr().out
        assert code == 0
        assert "max_relative_error" in out

    def test_train_finetune_evaluate_roundtrip(self, quick_config, tmp_path,
                                               capsys):
        cfg_path = tmp_path / "quick.json"
        save_config(quick_config, cfg_path)
        out = tmp_path / "run"
        assert cli.main(["train-base", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        assert (out / "base.ckpt").exists()
        assert (out / "base.phases.txt").exists()
        assert cli.main(["finetune", "--checkpoint", str(out / "base.ckpt"),
                         "--out", str(out)]) == 0
        assert cli.main(["evaluate", "--checkpoint", str(out / "finetune.ckpt"),
                         "--power", "30", "--out", str(out)]) == 0
        assert (out / "evaluate.csv").exists()
        assert (out / "evaluate.json").exists()

    def test_evaluate_with_mismatched_checkpoint_fails_with_shape_error(
            self, quick_config, tmp_path, capsys):
        cfg_path = tmp_path / "quick.json"
        save_config(quick_config, cfg_path)
        out = tmp_path / "run2"
        assert cli.main(["train-base", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        from simfd.config import with_unit_grid
        other = with_unit_grid(quick_config, (3, 3))
        other_path = tmp_path / "other.json"
        save_config(other, other_path)
        code = cli.main(["evaluate", "--checkpoint", str(out / "base.ckpt"),
                         "--config", str(other_path), "--power", "30",
                         "--out", str(out)])
        assert code == 1
        assert "shape" in capsys.readouterr().err

    def test_physics_dump_writes_matrix_csvs(self, quick_config, tmp_path):
        cfg_path = tmp_path / "quick.json"
        save_config(quick_config, cfg_path)
        out = tmp_path / "dump"
        assert cli.main(["physics-dump", "--config", str(cfg_path),
                         "--out", str(out), "--realization-seed", "7"]) == 0
        dump = (out / "t1_tx_operator.csv").read_text().splitlines()
        assert dump[0] == "row,col,re,im"
        # 16x4 operator for the miniature TX side
        assert len(dump) - 1 == 16 * 4
        assert (out / "t1_corr_rx.csv").exists()
        # the audited realization reproduces from its recorded seed
        links = (out / "g12.csv").read_text().splitlines()
        assert len(links) - 1 == 16 * 16
        want = ChannelSource(quick_config).instantaneous(7).link(1, 2)
        row, col, re, im = links[1].split(",")
        assert complex(float(re), float(im)) == want[int(row), int(col)]

    def test_sweep_smoke(self, quick_config, tmp_path):
        cfg = replace(quick_config,
                      training=replace(quick_config.training, epochs=6),
                      evaluation=replace(quick_config.evaluation, monte_carlo=1,
                                         test_scale=120)).validate()
        cfg_path = tmp_path / "tiny.json"
        save_config(cfg, cfg_path)
        out = tmp_path / "sweep"
        assert cli.main(["sweep", "--config", str(cfg_path), "--kind", "bits",
                         "--grid", "4+4,2+2", "--out", str(out)]) == 0
        assert (out / "sweep_bits.csv").exists()

    def test_missing_subcommand_usage(self):
        assert cli.main([]) == 2


class TestConfigFile:
    def test_roundtrip(self, quick_config, tmp_path):
        path = tmp_path / "cfg.json"
        save_config(quick_config, path)
        from simfd.config import load_config
        loaded = load_config(path)
        assert loaded.digest() == quick_config.digest()

    def test_derived_seed_is_stable(self):
        assert ev.derive_seed(1234, 0) == ev.derive_seed(1234, 0)
        assert ev.derive_seed(1234, 0) != ev.derive_seed(1234, 1)
        assert ev.derive_seed(0, 1) != ev.derive_seed(1, 0)
