import csv
import json
import shutil
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from iflg import cli
from iflg import numeric as nm
from iflg.encoder import DivergenceError
from iflg.graph import SbmSpec, load_dataset, sbm_generate

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-sbm", "--blocks", 10, 10, "--p-in", 0.5, "--p-out", 0.05, "--feature-dim", 16,
               "--seed", 2, "--out-dir", d) == 0
    return d / "sbm.json"


def write_config(path, dataset, **train):
    t = {"warmup_epochs": 20, "interval": 4, "rounds": 2, "tau": 0.5, "t_s": 0.5, "lr": 0.005, **train}
    cfg = {"dataset": str(dataset), "train": t, "encoder": {"hidden_dim": 16, "out_dim": 8},
           "probe": {"repeats": 2, "epochs": 50}}
    path.write_text(json.dumps(cfg))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestGenSbm:
    def test_round_trip(self, tmp_path):
        assert run("gen-sbm", "--blocks", 20, 20, "--p-in", 0.5, "--p-out", 0.05, "--feature-dim", 8,
                   "--seed", 7, "--out-dir", tmp_path) == 0
        g = load_dataset(tmp_path / "sbm.json")
        h = sbm_generate(SbmSpec((20, 20), 0.5, 0.05, 8, seed=7))
        np.testing.assert_array_equal(g.edges(), h.edges())
        np.testing.assert_array_equal(g.features, h.features)
        np.testing.assert_array_equal(g.labels, h.labels)

    def test_byte_identical_rerun(self, tmp_path):
        args = ["gen-sbm", "--blocks", 5, 7, "--p-in", 0.6, "--p-out", 0.1, "--feature-dim", 4, "--seed", 3]
        run(*args, "--out-dir", tmp_path / "a")
        run(*args, "--out-dir", tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_clique_line_count(self, tmp_path):
        run("gen-sbm", "--blocks", 20, 20, "--p-in", 1, "--p-out", 0, "--feature-dim", 2, "--out-dir", tmp_path)
        lines = (tmp_path / "sbm.edges.tsv").read_text().splitlines()
        assert len(lines) == 380
        assert all(int(a) < int(b) for a, b in (ln.split("\t") for ln in lines))

    def test_invalid_spec(self, tmp_path):
        assert run("gen-sbm", "--blocks", 3, "--p-in", 0.1, "--p-out", 0.5, "--feature-dim", 2,
                   "--out-dir", tmp_path) == cli.EXIT_CONFIG


class TestPretrain:
    def test_artifacts_and_schema(self, tmp_path, dataset):
        cfg = write_config(tmp_path / "c.json", dataset, probe_every=1)
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "out") == 0
        out = tmp_path / "out"
        for name in ("report.json", "final.ckpt", "best.ckpt", "loss.csv", "rounds.csv", "manifest.json"):
            assert (out / name).is_file()
        report = json.loads((out / "report.json").read_text())
        jsonschema.validate(report, cli.load_schema("report"))
        assert report["schema_version"] == 1
        assert len(read_csv(out / "loss.csv")) == 20 + 2 * 4
        rounds = read_csv(out / "rounds.csv")
        assert [r["round_id"] for r in rounds] == ["1", "2"]
        assert report["config"]["augment"]["p_edge_drop"] == 0.2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["dataset_digest"] == cli.dataset_digest(dataset)
        assert manifest["run_id"] == report["run_id"]
        assert manifest["resolved_config"]["train"]["optimizer"] == "adam"

    def test_bundled_config(self, tmp_path):
        shutil.copytree(ROOT / "configs", tmp_path / "configs")
        assert run("pretrain", "--config", tmp_path / "configs" / "sbm.json", "--out-dir", tmp_path / "o") == 0
        jsonschema.validate(json.loads((tmp_path / "o" / "report.json").read_text()), cli.load_schema("report"))

    def test_deterministic(self, tmp_path, dataset):
        cfg = write_config(tmp_path / "c.json", dataset)
        run("pretrain", "--config", cfg, "--out-dir", tmp_path / "a")
        run("pretrain", "--config", cfg, "--out-dir", tmp_path / "b")
        for name in ("loss.csv", "rounds.csv", "final.ckpt", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_override(self, tmp_path, dataset):
        cfg = write_config(tmp_path / "c.json", dataset)
        run("pretrain", "--config", cfg, "--out-dir", tmp_path / "a")
        run("pretrain", "--config", cfg, "--out-dir", tmp_path / "b", "--seed", 5)
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert b["config"]["train"]["seed"] == 5 and a["run_id"] != b["run_id"]

    def test_baseline_mode(self, tmp_path, dataset):
        cfg = write_config(tmp_path / "c.json", dataset)
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "o", "--mode", "baseline") == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["rounds"] == [] and len(report["losses"]) == 20

    def test_literal_flag(self, tmp_path, dataset):
        cfg = write_config(tmp_path / "c.json", dataset, probe_every=1)
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "o", "--algorithm1-literal") == 0
        t = json.loads((tmp_path / "o" / "report.json").read_text())["config"]["train"]
        assert (t["freeze_views"], t["optimizer"], t["probe_every"]) == (True, "sgd", 0)
        assert not (tmp_path / "o" / "best.ckpt").exists()

    @pytest.mark.parametrize("mutate", [
        lambda c: c["train"].pop("t_s"),
        lambda c: c["train"].pop("tau"),
        lambda c: c["train"].update(bogus=1),
        lambda c: c["train"].update(t_s=2.0),
        lambda c: c.update(plotting=True),
    ])
    def test_config_errors(self, tmp_path, dataset, mutate):
        path = write_config(tmp_path / "c.json", dataset)
        cfg = json.loads(path.read_text())
        mutate(cfg)
        path.write_text(json.dumps(cfg))
        assert run("pretrain", "--config", path, "--out-dir", tmp_path / "o") == cli.EXIT_CONFIG

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert run("pretrain", "--config", tmp_path / "c.json", "--out-dir", tmp_path / "o") == cli.EXIT_CONFIG

    def test_missing_dataset(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", tmp_path / "nope.json")
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "o") == cli.EXIT_DATA

    def test_divergence_exit_code(self, tmp_path, dataset, monkeypatch):
        def boom(*a, **k):
            raise DivergenceError("non-finite loss nan at epoch 3")

        monkeypatch.setattr(cli, "run_algorithm1", boom)
        cfg = write_config(tmp_path / "c.json", dataset)
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "o") == cli.EXIT_DIVERGED

    def test_internal_error_exit_code(self, tmp_path, dataset, monkeypatch):
        monkeypatch.setattr(cli, "run_algorithm1", lambda *a, **k: 1 / 0)
        cfg = write_config(tmp_path / "c.json", dataset)
        assert run("pretrain", "--config", cfg, "--out-dir", tmp_path / "o") == cli.EXIT_INTERNAL


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    d = tmp_path_factory.mktemp("trained")
    cfg = write_config(d / "c.json", dataset, probe_every=1)
    assert run("pretrain", "--config", cfg, "--out-dir", d / "o") == 0
    return d / "o"


class TestProbe:
    def test_comparable_checkpoints(self, tmp_path, trained, dataset):
        for name in ("final", "best"):
            assert run("probe", "--checkpoint", trained / f"{name}.ckpt", "--dataset", dataset,
                       "--split-seed", 3, "--out-dir", tmp_path, "--name", f"{name}.json") == 0
        a = json.loads((tmp_path / "final.json").read_text())
        b = json.loads((tmp_path / "best.json").read_text())
        assert a["split_seed"] == b["split_seed"] == 3 and a["split_sizes"] == b["split_sizes"] == [2, 2, 16]
        assert len(a["accuracies"]) == 3

    def test_dimension_mismatch(self, tmp_path, trained, capsys):
        run("gen-sbm", "--blocks", 5, 5, "--p-in", 0.5, "--p-out", 0.1, "--feature-dim", 9, "--out-dir", tmp_path)
        code = run("probe", "--checkpoint", trained / "final.ckpt", "--dataset", tmp_path / "sbm.json",
                   "--out-dir", tmp_path / "p")
        assert code == cli.EXIT_DATA
        assert "16 input features" in capsys.readouterr().err

    def test_corrupted_magic(self, tmp_path, trained, dataset):
        raw = bytearray((trained / "final.ckpt").read_bytes())
        raw[0:4] = b"GLFI"
        (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
        assert run("probe", "--checkpoint", tmp_path / "bad.ckpt", "--dataset", dataset,
                   "--out-dir", tmp_path / "p") == cli.EXIT_DATA

    def test_bad_ratio(self, tmp_path, trained, dataset):
        assert run("probe", "--checkpoint", trained / "final.ckpt", "--dataset", dataset, "--ratio", "1:1",
                   "--out-dir", tmp_path) == cli.EXIT_CONFIG


class TestAudit:
    def test_outputs_deterministic(self, tmp_path, dataset):
        for d in ("a", "b"):
            assert run("audit", "--dataset", dataset, "--sup-epochs", 30, "--top-k", 4, "--seed", 1,
                       "--out-dir", tmp_path / d) == 0
        assert (tmp_path / "a" / "audit.csv").read_bytes() == (tmp_path / "b" / "audit.csv").read_bytes()
        rows = read_csv(tmp_path / "a" / "audit.csv")
        assert len(rows) == 20 and len(rows[0]) == 5
        summary = json.loads((tmp_path / "a" / "audit.json").read_text())
        assert 0.0 <= summary["exceed_fraction"] <= 1.0

    def test_unlabeled(self, tmp_path, dataset):
        m = json.loads(dataset.read_text())
        m["labels"] = None
        for key in ("edges", "features"):
            m[key] = str(dataset.parent / m[key])
        (tmp_path / "u.json").write_text(json.dumps(m))
        assert run("audit", "--dataset", tmp_path / "u.json", "--out-dir", tmp_path / "o") == cli.EXIT_DATA


class TestSweep:
    def sweep(self, tmp_path, dataset, axes, seeds, **extra):
        write_config(tmp_path / "base.json", dataset)
        spec = {"base": "base.json", "axes": axes, "seeds": seeds, **extra}
        (tmp_path / "s.json").write_text(json.dumps(spec))
        return run("sweep", "--sweep", tmp_path / "s.json", "--out-dir", tmp_path / "out")

    def test_product_count_and_order(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"t_s": [0.9, 0.5], "beta": [1.0, 0.5]}, [1, 0]) == 0
        rows = read_csv(tmp_path / "out" / "sweep.csv")
        assert len(rows) == 8
        keys = [(float(r["beta"]), float(r["t_s"]), int(r["seed"])) for r in rows]
        assert keys == sorted(keys)
        assert all(r["status"] == "ok" for r in rows)

    def test_threshold_monotone(self, tmp_path, dataset):
        grid = [0.8, 0.85, 0.9, 0.95, 0.99]
        assert self.sweep(tmp_path, dataset, {"t_s": grid}, [0]) == 0
        rows = read_csv(tmp_path / "out" / "sweep.csv")
        first = [int(r["first_num_unlabeled"]) for r in rows]
        assert [float(r["t_s"]) for r in rows] == grid
        assert all(a >= b for a, b in zip(first, first[1:]))

    def test_single_point_matches_pretrain_probe(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"t_s": [0.5]}, [0]) == 0
        row = read_csv(tmp_path / "out" / "sweep.csv")[0]
        cfg = json.loads((tmp_path / "base.json").read_text())
        cfg["train"].update(t_s=0.5, seed=0)
        (tmp_path / "single.json").write_text(json.dumps(cfg))
        run("pretrain", "--config", tmp_path / "single.json", "--out-dir", tmp_path / "p")
        report = json.loads((tmp_path / "p" / "report.json").read_text())
        assert float(row["probe_mean"]) == report["final_probe"]["mean"]
        run("probe", "--checkpoint", tmp_path / "p" / "final.ckpt", "--dataset", dataset, "--repeats", 2,
            "--out-dir", tmp_path / "q")
        probe = json.loads((tmp_path / "q" / "probe.json").read_text())
        assert probe["split_sizes"] == report["final_probe"]["split_sizes"]
        assert (tmp_path / "p" / "final.ckpt").read_bytes() == \
            (tmp_path / "out" / "run_0000" / "final.ckpt").read_bytes()

    def test_child_failure_recorded(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"t_s": [0.5, 1.5]}, [0]) == 0
        rows = read_csv(tmp_path / "out" / "sweep.csv")
        assert [r["status"] for r in rows] == ["ok", "ConfigError"]
        assert "t_s" in rows[1]["error"]

    def test_parallel_matches_serial(self, tmp_path, dataset, monkeypatch):
        for d in ("s1", "s2"):
            (tmp_path / d).mkdir()
        self.sweep(tmp_path / "s1", dataset, {"t_s": [0.5, 0.9]}, [0, 1])
        monkeypatch.setenv("IFLG_THREADS", "2")
        self.sweep(tmp_path / "s2", dataset, {"t_s": [0.5, 0.9]}, [0, 1])
        a = (tmp_path / "s1" / "out" / "sweep.csv").read_bytes()
        assert a == (tmp_path / "s2" / "out" / "sweep.csv").read_bytes()

    def test_cap(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"t_s": [0.5, 0.6, 0.7]}, [0, 1], max_runs=5) == cli.EXIT_CONFIG

    def test_unknown_axis(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"learning_rate": [0.1]}, [0]) == cli.EXIT_CONFIG

    def test_alias_collision(self, tmp_path, dataset):
        assert self.sweep(tmp_path, dataset, {"M": [10], "warmup_epochs": [20]}, [0]) == cli.EXIT_CONFIG


class TestSelftest:
    def test_passes(self, tmp_path, capsys):
        assert run("selftest", "--out-dir", tmp_path) == 0
        first = [ln.rsplit("  ", 1)[0] for ln in capsys.readouterr().out.splitlines()]
        assert run("selftest") == 0
        second = [ln.rsplit("  ", 1)[0] for ln in capsys.readouterr().out.splitlines()]
        assert first == second
        report = json.loads((tmp_path / "selftest.json").read_text())
        assert report["passed"] and report["seconds"] < 60

    def test_sign_flip_canary(self, monkeypatch, capsys):
        rule = nm.BACKWARD_RULES["relu"]
        monkeypatch.setitem(nm.BACKWARD_RULES, "relu", lambda out, g: [-x for x in rule(out, g)])
        assert run("selftest") == cli.EXIT_INTERNAL
        assert "FAIL  grad relu" in capsys.readouterr().out
