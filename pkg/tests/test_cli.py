import csv
import io
import json

import numpy as np
import pytest

import hqpamp.cli as cli
from hqpamp.amp import AmpError
from hqpamp.model import load_instance
from hqpamp.sweeps import (
    ConfigError,
    SweepConfig,
    derive_seed,
    fmt,
    parse_matching,
    splitmix64,
)


class TestSeeds:
    def test_splitmix_reference_outputs(self):
        # first two outputs of the generator started from state 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4

    def test_derive_seed_chain(self):
        h = splitmix64(5)
        for i in (1, 2, 3):
            h = splitmix64(h ^ i)
        assert derive_seed(5, 1, 2, 3) == h & (2**63 - 1)

    def test_seeds_differ_between_cells(self):
        seeds = {derive_seed(0, i, j, r) for i in range(3) for j in range(3) for r in range(3)}
        assert len(seeds) == 27
        assert all(0 <= s < 2**63 for s in seeds)


@pytest.mark.parametrize(
    "value, text",
    [(None, ""), (True, "1"), (False, "0"), (7, "7"), (np.int64(3), "3"), (0.1, "0.1"), (1 / 3, "0.3333333333")],
)
def test_fmt(value, text):
    assert fmt(value) == text


class TestSweepConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kappa_grid=()),
            dict(kappa_grid=(0.5, 0.4)),
            dict(kappa_grid=(-0.1, 0.4)),
            dict(p_grid=(0.0, 0.5)),
            dict(pi_mode="weird"),
            dict(seeds_per_cell=0),
            dict(pi_mode="explicit", d=3, pi=(0.5, 0.6, 0.1)),
        ],
    )
    def test_rejections(self, kwargs):
        args = dict(kappa_grid=(0.3, 0.5), p_grid=(0.3, 0.5))
        args.update(kwargs)
        with pytest.raises(ConfigError):
            SweepConfig(**args)

    def test_cells(self):
        cfg = SweepConfig(kappa_grid=(0.5,), p_grid=(0.2, 0.4))
        assert [c[2] for c in cfg.cells()] == [(0.2, 0.8), (0.4, 0.6)]
        assert len(SweepConfig(kappa_grid=(0.5,), pi_mode="uniform", d=3).cells()) == 1


def test_parse_matching():
    assert parse_matching("1:2, 4:3", 4) == [(0, 1), (2, 3)]
    with pytest.raises(ConfigError, match="overlap"):
        parse_matching("1:2,2:3", 4)
    with pytest.raises(ConfigError):
        parse_matching("1-2", 4)


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestCommands:
    def test_generate_then_decode(self, tmp_path, capsys):
        path = tmp_path / "inst.json"
        code, _, _ = _run(capsys, "generate", "--n", "200", "--m", "120", "--seed", "3",
                          "--composition", "exact", "--out", str(path))
        assert code == 0
        inst = load_instance(path)
        code, out, _ = _run(capsys, "decode", "--instance", str(path), "--track-mse")
        assert code == 0
        doc = json.loads(out)
        assert doc["mse"] < 1e-8
        assert doc["hard_decisions"] == inst.planted.tolist()
        assert len(doc["per_iteration_mse"]) == doc["iterations"] + 1

    def test_rbp_decode(self, tmp_path, capsys):
        path = tmp_path / "inst.npz"
        _run(capsys, "generate", "--n", "40", "--m", "30", "--composition", "exact", "--out", str(path))
        code, out, _ = _run(capsys, "decode", "--instance", str(path), "--algorithm", "rbp")
        assert code == 0
        assert json.loads(out)["iterations"] is None

    def test_pi_sets_the_number_of_categories(self, tmp_path, capsys):
        path = tmp_path / "inst.json"
        assert _run(capsys, "generate", "--pi", "0.2,0.3,0.5", "--out", str(path))[0] == 0
        assert load_instance(path).d == 3

    @pytest.mark.parametrize(
        "argv",
        [
            ["generate", "--pi", "0.5,0.6", "--out", "x.json"],
            ["decode", "--instance", "does-not-exist.json"],
            ["threshold", "binary", "--p", "1.5"],
            ["threshold", "matching", "--pi", "0.5,0.5", "--pair", "1,1"],
            ["se", "--d", "4", "--kappa", "0.3", "--x0", "matching", "--matching", "1:2,2:3"],
            ["phase-diagram", "--kappa-grid", "0.5,0.4", "--p-grid", "0.5"],
            ["nonsense"],
        ],
    )
    def test_configuration_errors_exit_with_one(self, capsys, argv):
        code, _, err = _run(capsys, *argv)
        assert code == 1
        assert "config error" in err

    def test_runtime_errors_exit_with_two(self, tmp_path, capsys, monkeypatch):
        path = tmp_path / "inst.json"
        _run(capsys, "generate", "--out", str(path))

        def boom(*_args, **_kwargs):
            raise AmpError("indefinite", iteration=3)

        monkeypatch.setattr(cli, "amp_decode", boom)
        code, _, err = _run(capsys, "decode", "--instance", str(path))
        assert code == 2
        assert "AmpError" in err

    def test_flags_override_the_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"p": 0.3}))
        a = json.loads(_run(capsys, "threshold", "binary", "--config", str(cfg))[1])
        b = json.loads(_run(capsys, "threshold", "binary", "--config", str(cfg), "--p", "0.5")[1])
        assert a["kappa_star"] == pytest.approx(0.4269071270652682, abs=1e-9)
        assert b["kappa_star"] == pytest.approx(0.4795159706351345, abs=1e-9)

    def test_unknown_config_keys_are_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"q": 0.3}))
        code, _, err = _run(capsys, "threshold", "binary", "--config", str(cfg))
        assert code == 1 and "unknown config keys" in err

    def test_matching_threshold_is_one_based(self, capsys):
        code, out, _ = _run(capsys, "threshold", "matching", "--pi", "0.2,0.3,0.5", "--pair", "1,2")
        assert code == 0
        assert json.loads(out)["kappa_star"] == pytest.approx(0.2333482276438283, abs=1e-9)

    def test_table_drops_duplicates_with_a_warning(self, capsys):
        with pytest.warns(UserWarning, match="duplicate d = 2"):
            code, out, err = _run(capsys, "threshold", "table", "--d-list", "2,2", "--samples", "2000")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["d", "kappa_sym", "std_err"]
        assert len(rows) == 2
        assert "threshold table" in err

    def test_se_document(self, capsys):
        code, out, _ = _run(capsys, "se", "--d", "2", "--kappa", "0.3", "--fp-tol", "1e-10", "--max-iter", "2000")
        assert code == 0
        doc = json.loads(out)
        assert doc["fixed_point"]["converged"]
        assert doc["trajectory"][-1]["mse"] == pytest.approx(0.34046954248116906, abs=1e-7)

    def test_se_from_a_matching_start(self, capsys):
        code, out, _ = _run(capsys, "se", "--pi", "0.4,0.4,0.1,0.1", "--kappa", "0.2",
                            "--x0", "matching", "--matching", "1:2,3:4")
        assert code == 0
        x = np.array(json.loads(out)["fixed_point"]["X_star"]).reshape(4, 4)
        # above the 3-4 threshold, below the 1-2 threshold
        assert x[0, 1] < -1e-3
        assert x[2, 3] == pytest.approx(0.0, abs=1e-6)

    def test_matching_demo(self, capsys):
        code, out, _ = _run(capsys, "matching-demo", "--pi", "0.4,0.4,0.1,0.1", "--matching", "1:2,3:4",
                            "--kappa-list", "0.05,0.2,0.5")
        assert code == 0
        doc = json.loads(out)
        assert [run["surviving"] for run in doc["runs"]] == [[[1, 2], [3, 4]], [[1, 2]], []]
        assert all(run["agree"] for run in doc["runs"])

    def test_phase_diagram_is_reproducible(self, tmp_path, capsys):
        argv = ["phase-diagram", "--p-grid", "0.5", "--kappa-grid", "0.6", "--n", "2000", "--seeds-per-cell", "2"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert _run(capsys, *argv, "--out", str(a))[0] == 0
        assert _run(capsys, *argv, "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()
        rows = list(csv.DictReader(io.StringIO(a.read_text())))
        assert [r["seed"] for r in rows][0] == ""
        amp_rows = rows[1:]
        assert len(amp_rows) == 2
        assert all(float(r["mse_amp"]) < 1e-4 and r["converged"] == "1" for r in amp_rows)
        assert int(amp_rows[0]["seed"]) == derive_seed(0, 0, 0, 0)
