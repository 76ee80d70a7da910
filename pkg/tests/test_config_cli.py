"""Configuration resolution, experiment assembly, and the command line."""

import copy
import json

import numpy as np
import pytest

from c2fl import cli, config, data, experiment
from c2fl.errors import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    FormatError,
    NumericError,
)

TINY = {
    "dataset": {
        "num_classes": 3,
        "input_dim": 6,
        "n_max": 30,
        "imbalance": 3.0,
        "n_test_per_class": 8,
        "spread": 0.6,
    },
    "partition": {"num_clients": 3, "alpha": 1.0},
    "model": {"hidden_sizes": [8], "feature_dim": 5},
    "training": {"rounds": 2, "epochs": 1, "batch_size": 16},
    "server": {
        "fraction": 1.0,
        "m": 4,
        "feature_steps": 10,
        "tau": 0.5,
        "retrain_steps": 20,
        "retrain_lr": 0.05,
        "per_class_cap": 16,
    },
    "groups": {"many_min": 20, "few_max": 12},
}


def tiny_cfg(**top):
    raw = copy.deepcopy(TINY)
    raw.update(top)
    return config.resolve(raw)


class TestResolve:
    def test_defaults_fully_echoed(self):
        cfg = config.resolve()
        assert cfg["method"] == "clip2fl"
        assert cfg["server"]["eta_pcl"] == 1e-05
        assert cfg["training"]["beta"] == 3.0
        assert cfg["teacher"]["prompt_template"] == "This is a {name}"
        assert set(cfg) == set(config.DEFAULTS)
        for section in ("dataset", "server", "teacher", "metrics"):
            assert set(cfg[section]) == set(config.DEFAULTS[section])

    def test_unknown_keys_named_in_error(self):
        with pytest.raises(ConfigError, match="bogus"):
            config.resolve({"bogus": 1})
        with pytest.raises(ConfigError, match="server.bogus"):
            config.resolve({"server": {"bogus": 1}})

    def test_file_values_then_overrides_win(self):
        cfg = config.resolve({"server": {"tau": 0.2}}, ["server.tau=0.7"])
        assert cfg["server"]["tau"] == 0.7

    def test_override_value_types(self):
        parts, v = config.parse_set_override("server.tau=0.25")
        assert parts == ["server", "tau"] and v == 0.25
        _, v = config.parse_set_override("metrics.cka=true")
        assert v is True
        _, v = config.parse_set_override("server.retrain_batch=null")
        assert v is None
        _, v = config.parse_set_override("model.hidden_sizes=[16,8]")
        assert v == [16, 8]
        _, v = config.parse_set_override("method=no_pcl")
        assert v == "no_pcl"

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError):
            config.parse_set_override("no_equals_sign")
        with pytest.raises(ConfigError):
            config.parse_set_override("=5")
        cfg = copy.deepcopy(config.DEFAULTS)
        with pytest.raises(ConfigError, match="server.nope"):
            config.apply_override(cfg, ["server", "nope"], 1)

    def test_method_forcing_echoed(self):
        assert config.resolve({"method": "no_pcl"})["server"]["eta_pcl"] == 0.0
        assert config.resolve({"method": "no_kd"})["training"]["beta"] == 0.0
        assert config.resolve({"method": "fedavg"})["training"]["beta"] == 0.0
        kept = config.resolve({"method": "clip2fl"})
        assert kept["server"]["eta_pcl"] == 1e-05 and kept["training"]["beta"] == 3.0

    @pytest.mark.parametrize(
        "raw,where",
        [
            ({"method": "sgd"}, "method"),
            ({"seed": -1}, "seed"),
            ({"workers": 0}, "workers"),
            ({"dataset": {"kind": "csv"}}, "dataset.kind"),
            ({"dataset": {"kind": "import"}}, "dataset.path"),
            ({"dataset": {"num_classes": 1}}, "dataset.num_classes"),
            ({"dataset": {"imbalance": 0.5}}, "dataset.imbalance"),
            ({"dataset": {"n_max": 50, "imbalance": 100.0}}, "dataset.n_max"),
            ({"partition": {"alpha": 0}}, "partition.alpha"),
            ({"model": {"hidden_sizes": [0]}}, "model.hidden_sizes"),
            ({"training": {"momentum": 1.0}}, "training.momentum"),
            ({"training": {"beta": -1}}, "training.beta"),
            ({"server": {"fraction": 0}}, "server.fraction"),
            ({"server": {"tau": 0}}, "server.tau"),
            ({"server": {"pcl_variant": "x"}}, "server.pcl_variant"),
            ({"server": {"retrain_batch": 0}}, "server.retrain_batch"),
            ({"teacher": {"kind": "api"}}, "teacher.kind"),
            ({"teacher": {"kind": "file"}}, "teacher.path"),
            ({"teacher": {"prompt_template": "no placeholder"}}, "teacher.prompt_template"),
            ({"teacher": {"dim": 16}}, "teacher.dim"),
            ({"groups": {"many_min": 5, "few_max": 20}}, "groups.many_min"),
            ({"metrics": {"cka": 1}}, "metrics.cka"),
        ],
    )
    def test_validation_errors_name_the_key(self, raw, where):
        with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
            config.resolve(raw)

    def test_teacher_dim_matching_feature_dim_allowed(self):
        cfg = config.resolve({"teacher": {"dim": 32}})
        assert cfg["teacher"]["dim"] == 32

    def test_fedavg_ignores_teacher_dim_mismatch(self):
        cfg = config.resolve({"method": "fedavg", "teacher": {"dim": 16}})
        assert cfg["teacher"]["dim"] == 16

    def test_load_config_file_errors(self, tmp_path):
        with pytest.raises(FormatError):
            config.load_config_file(tmp_path / "absent.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            config.load_config_file(bad)
        arr = tmp_path / "arr.json"
        arr.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            config.load_config_file(arr)


class TestBuild:
    def test_tiny_experiment_assembles(self):
        exp = experiment.build(tiny_cfg())
        assert len(exp.shards) == 3
        assert all(len(s) > 0 for s in exp.shards)
        assert exp.counts.tolist() == [30, 17, 10]
        grouped = np.concatenate([exp.groups[n] for n in ("many", "medium", "few")])
        assert sorted(grouped.tolist()) == [0, 1, 2]
        assert exp.initial_state.round == 0
        assert exp.eval_ctx.probe is None
        assert exp.teacher.dim == 5

    def test_fedavg_has_no_teacher(self):
        exp = experiment.build(tiny_cfg(method="fedavg"))
        assert exp.teacher is None

    def test_probe_is_balanced(self):
        cfg = tiny_cfg(metrics={"cka": True, "cka_probe": 12})
        exp = experiment.build(cfg)
        assert exp.eval_ctx.probe is not None
        assert exp.eval_ctx.probe.class_counts().tolist() == [4, 4, 4]

    def test_probe_larger_than_test_class_rejected(self):
        cfg = tiny_cfg(metrics={"cka": True, "cka_probe": 100})
        with pytest.raises(ConfigError, match="cka_probe"):
            experiment.build(cfg)

    def test_import_dataset_round_trip(self, tmp_path):
        train, test, _ = data.blob_benchmark(3, 6, 30, 3.0, 8, 0.6, 4.0, 5)
        data.save_dataset_dir(tmp_path / "ds" / "train", train)
        data.save_dataset_dir(tmp_path / "ds" / "test", test)
        cfg = tiny_cfg()
        cfg["dataset"]["kind"] = "import"
        cfg["dataset"]["path"] = str(tmp_path / "ds")
        exp = experiment.build(cfg)
        assert exp.counts.tolist() == [30, 17, 10]
        assert np.allclose(exp.train.samples, train.samples)

    def test_import_class_name_mismatch_rejected(self, tmp_path):
        train, test, _ = data.blob_benchmark(3, 6, 30, 3.0, 8, 0.6, 4.0, 5)
        renamed = data.LabeledDataset(
            test.samples, test.labels, ("x", "y", "z"), test.ids
        )
        data.save_dataset_dir(tmp_path / "ds" / "train", train)
        data.save_dataset_dir(tmp_path / "ds" / "test", renamed)
        cfg = tiny_cfg()
        cfg["dataset"]["kind"] = "import"
        cfg["dataset"]["path"] = str(tmp_path / "ds")
        with pytest.raises(FormatError):
            experiment.build(cfg)


class TestRun:
    def test_writes_outputs_and_round_count(self, tmp_path):
        cfg = tiny_cfg(out=str(tmp_path / "r"))
        summary = experiment.run(cfg)
        assert (tmp_path / "r" / "metrics.jsonl").is_file()
        assert (tmp_path / "r" / "final.json").is_file()
        resolved = json.loads((tmp_path / "r" / "config.resolved.json").read_text())
        assert resolved == cfg
        lines = (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 2
        rounds = [json.loads(line)["round"] for line in lines]
        assert rounds == [0, 1]
        assert summary["acc_all"] == json.loads(lines[-1])["acc_all"]

    def test_rerun_byte_identical(self, tmp_path):
        a = tiny_cfg(out=str(tmp_path / "a"))
        b = tiny_cfg(out=str(tmp_path / "b"))
        experiment.run(a)
        experiment.run(b)
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (
            tmp_path / "b" / "metrics.jsonl"
        ).read_bytes()

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        one = tiny_cfg(out=str(tmp_path / "w1"))
        four = tiny_cfg(out=str(tmp_path / "w4"), workers=4)
        experiment.run(one)
        experiment.run(four)
        assert (tmp_path / "w1" / "metrics.jsonl").read_bytes() == (
            tmp_path / "w4" / "metrics.jsonl"
        ).read_bytes()

    def test_cka_recorded_when_enabled(self, tmp_path):
        cfg = tiny_cfg(out=str(tmp_path / "c"), metrics={"cka": True, "cka_probe": 12})
        experiment.run(cfg)
        line = json.loads(
            (tmp_path / "c" / "metrics.jsonl").read_text().splitlines()[0]
        )
        assert 0.0 <= line["cka_mean"] <= 1.0 + 1e-9

    def test_compare_reads_summaries(self, tmp_path):
        for name, method in (("a", "clip2fl"), ("b", "fedavg")):
            experiment.run(tiny_cfg(out=str(tmp_path / name), method=method))
        rows = experiment.compare([tmp_path / "a", tmp_path / "b"])
        assert {r["method"] for r in rows} == {"clip2fl", "fedavg"}
        with pytest.raises(ConfigError):
            experiment.compare([tmp_path / "a"])
        with pytest.raises(FormatError):
            experiment.compare([tmp_path / "a", tmp_path / "missing"])


def run_cli(tmp_path, *extra):
    cfg_path = tmp_path / "cfg.json"
    if not cfg_path.is_file():
        cfg_path.write_text(json.dumps(TINY))
    return cli.main(["run", "--config", str(cfg_path), *extra])


class TestCli:
    def test_run_succeeds_and_prints_summary(self, tmp_path, capsys):
        code = run_cli(tmp_path, "--out", str(tmp_path / "out"), "--seed", "3")
        assert code == EXIT_OK
        line = capsys.readouterr().out.strip()
        assert line.startswith("clip2fl seed=3 acc_all=")
        resolved = json.loads(
            (tmp_path / "out" / "config.resolved.json").read_text()
        )
        assert resolved["seed"] == 3

    def test_method_flag_forces_like_config(self, tmp_path):
        code = run_cli(
            tmp_path, "--method", "no_kd", "--out", str(tmp_path / "nk")
        )
        assert code == EXIT_OK
        resolved = json.loads((tmp_path / "nk" / "config.resolved.json").read_text())
        assert resolved["training"]["beta"] == 0.0

    def test_bad_override_exits_config_code(self, tmp_path, capsys):
        code = run_cli(tmp_path, "--set", "server.tau=0", "--out", str(tmp_path / "x"))
        assert code == EXIT_CONFIG
        assert "server.tau" in capsys.readouterr().err

    def test_unknown_key_exits_config_code(self, tmp_path, capsys):
        code = run_cli(tmp_path, "--set", "server.nope=1", "--out", str(tmp_path / "x"))
        assert code == EXIT_CONFIG
        assert "server.nope" in capsys.readouterr().err

    def test_missing_config_file_exits_io_code(self, tmp_path, capsys):
        code = cli.main(["run", "--config", str(tmp_path / "nope.json")])
        assert code == EXIT_IO
        assert "not found" in capsys.readouterr().err

    def test_numeric_failure_maps_to_exit_code(self, tmp_path, monkeypatch, capsys):
        def boom(cfg):
            raise NumericError("non-finite metric in round 0")

        monkeypatch.setattr(experiment, "run", boom)
        code = run_cli(tmp_path, "--out", str(tmp_path / "x"))
        assert code == EXIT_NUMERIC
        assert "non-finite" in capsys.readouterr().err

    def test_os_error_maps_to_io_code(self, tmp_path, monkeypatch, capsys):
        def boom(cfg):
            raise OSError("disk gone")

        monkeypatch.setattr(experiment, "run", boom)
        assert run_cli(tmp_path, "--out", str(tmp_path / "x")) == EXIT_IO

    def test_partition_report_columns_sum_to_counts(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TINY))
        code = cli.main(["partition-report", "--config", str(cfg_path)])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        header = lines[0].split(",")
        assert header[0] == "client" and len(header) == 4
        table = np.array([[int(v) for v in line.split(",")[1:]] for line in lines[1:]])
        assert table.shape == (3, 3)
        assert table.sum(axis=0).tolist() == [30, 17, 10]

    def test_compare_prints_rows_and_means(self, tmp_path, capsys):
        for name, method, seed in (
            ("a", "clip2fl", "0"),
            ("b", "clip2fl", "1"),
            ("c", "fedavg", "0"),
        ):
            assert (
                run_cli(
                    tmp_path, "--method", method, "--seed", seed,
                    "--out", str(tmp_path / name),
                )
                == EXIT_OK
            )
        capsys.readouterr()
        code = cli.main(
            ["compare", str(tmp_path / "a"), str(tmp_path / "b"), str(tmp_path / "c")]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0].split("\t")[:3] == ["method", "seed", "acc_all"]
        body = [line.split("\t") for line in out[1:]]
        methods = [row[0] for row in body]
        assert methods == ["clip2fl", "clip2fl", "fedavg", "clip2fl:mean", "fedavg:mean"]
        mean_row = body[3]
        a0, a1 = float(body[0][2]), float(body[1][2])
        assert float(mean_row[2]) == pytest.approx((a0 + a1) / 2, abs=5e-5)

    def test_compare_missing_dir_exits_io_code(self, tmp_path, capsys):
        (tmp_path / "a").mkdir()
        (tmp_path / "a" / "final.json").write_text(
            json.dumps({"method": "fedavg", "seed": 0, "acc_all": 0.5})
        )
        code = cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")])
        assert code == EXIT_IO
        assert "final.json" in capsys.readouterr().err
