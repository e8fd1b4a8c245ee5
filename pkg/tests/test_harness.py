import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch
from loguru import logger

import harness.ablation
from harness.__main__ import make_parser, run
from harness.ablation import DEFAULT_ARMS, Arm, ordering_violations, parse_arm, run_ablation
from harness.config import PROFILES, build_config, deep_merge, load_train_config
from harness.data import SplitDataset, build_dataset, iterate_batches, split_by_subject, write_synthetic
from harness.evaluate import UNREGISTERED, evaluate_identity, load_for_evaluation, mean_dsc, unregistered_dsc
from harness.register import register_files
from harness.sweep import run_dict_size_sweep, sized_config
from harness.trainer import CURVE_COLUMNS, Trainer, train
from losses.objective import LOSS_LOG_COLUMNS
from regnet.checkpoint import load_checkpoint, save_checkpoint
from regnet.model import RegModel
from transform.ddf import load_ddf
from utils.errors import AblationError, CheckpointMismatchError, ConfigError, NonFiniteLossError, ShapeMismatchError
from volume_core.synth import synth_dataset
from volume_core.types import RegistrationSample
from volume_core.volume_io import SAMPLE_FILES, load_volume, save_sample


def smoke(**overrides):
    return build_config(deep_merge({"run": {"deterministic": True}}, overrides), "smoke")


@pytest.fixture(scope="module")
def smoke_data():
    return build_dataset(smoke().data)


class TestConfig:
    def test_profiles_validate(self):
        for name in PROFILES:
            config = build_config({}, name)
            assert config.profile == name

    def test_full_profile(self):
        config = build_config({}, "full")
        assert config.optimizer.lr == 1e-4
        assert config.run.batch_size == 4 and config.run.epochs == 1000
        assert config.loss.lambda_B == 50.0
        assert config.network.dict_sizes == (1024, 1024, 512)
        assert build_config({}, "full-sweep-best").network.dict_sizes[::2] == (512, 1024)

    def test_desk_defaults(self):
        config = build_config()
        assert config.profile == "desk"
        assert config.network.input_dims == config.data.dims == (32, 32, 24)
        assert config.bootstrap.seg_network.feature_channels == config.network.dict_channels[2]

    def test_errors(self):
        with pytest.raises(ConfigError):
            build_config({}, "cluster")
        with pytest.raises(ConfigError):
            build_config({"data": {"dims": [16, 16, 16]}}, "desk")
        with pytest.raises(ConfigError):
            build_config({"bootstrap": {"K_c": 16}}, "desk")
        with pytest.raises(ConfigError):
            build_config({"run": {"epochs": 1001}}, "full")
        with pytest.raises(ConfigError):
            build_config({"loss": {"lambda_B": -1.0}})
        with pytest.raises(ConfigError):
            build_config({"optimizer": {"name": "sgd"}})
        with pytest.raises(ConfigError):
            build_config({"unknown": {}})

    def test_load_file(self, tmp_path):
        path = tmp_path / "train.toml"
        path.write_text('profile = "smoke"\n\n[run]\nepochs = 3\n\n[loss]\nlambda_B = 5.0\n', encoding="utf-8")
        config = load_train_config(path)
        assert config.profile == "smoke"
        assert config.run.epochs == 3 and config.loss.lambda_B == 5.0
        assert config.network.input_dims == (16, 16, 16)
        assert load_train_config(path, profile="desk").network.input_dims == (32, 32, 24)

    def test_shipped_templates_load(self):
        templates = sorted((Path(__file__).resolve().parents[1] / "train_config_template").glob("*.toml"))
        assert {p.stem for p in templates} == {"smoke", "desk_ablation", "desk_no_quant", "full", "full_sweep_best"}
        for path in templates:
            assert load_train_config(path).profile in PROFILES

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_train_config(tmp_path / "missing.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("[run\nepochs = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_train_config(bad)

    def test_deterministic_env(self, monkeypatch):
        monkeypatch.setenv("VQREG_DETERMINISTIC", "1")
        assert build_config().deterministic
        monkeypatch.setenv("VQREG_DETERMINISTIC", "0")
        assert not build_config().deterministic
        assert smoke().deterministic


class TestData:
    def test_split_by_subject(self):
        samples = [r.sample for r in synth_dataset(10, (16, 16, 16), 0.5, seed=0)]
        train_, val, test = split_by_subject(samples, (0.7, 0.1, 0.2), seed=1)
        assert (len(train_), len(val), len(test)) == (7, 1, 2)
        ids = [{s.subject_id for s in part} for part in (train_, val, test)]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        again = split_by_subject(samples, (0.7, 0.1, 0.2), seed=1)
        assert [s.subject_id for s in again[0]] == [s.subject_id for s in train_]

    def test_smoke_dataset(self, smoke_data):
        assert smoke_data.sizes() == (4, 1, 1)
        everything = smoke_data.train + smoke_data.val + smoke_data.test
        assert set(smoke_data.ground_truth) == {s.subject_id for s in everything}

    def test_written_dataset_reloads(self, tmp_path):
        config = smoke().data.model_copy(update={"n_pairs": 3})
        written = write_synthetic(config, tmp_path)
        assert all((d / SAMPLE_FILES["fixed"]).exists() for d in written)
        loaded = build_dataset(config.model_copy(update={"dataset_dir": str(tmp_path)}))
        assert sum(loaded.sizes()) == 3
        assert set(loaded.ground_truth) == {d.name for d in written}

    def test_iterate_batches(self, smoke_data):
        batches = list(iterate_batches(smoke_data.train, 3))
        assert [len(b) for b in batches] == [3, 1]
        order = [s.subject_id for b in iterate_batches(smoke_data.train, 2, np.random.default_rng(0)) for s in b]
        again = [s.subject_id for b in iterate_batches(smoke_data.train, 2, np.random.default_rng(0)) for s in b]
        assert order == again and sorted(order) == sorted(s.subject_id for s in smoke_data.train)


class TestTraining:
    def test_identity_start(self, smoke_data):
        model = RegModel(smoke().network)
        assert mean_dsc(model, smoke_data.train) == unregistered_dsc(smoke_data.train)

    def test_run_writes_artifacts(self, smoke_data, tmp_path):
        result = train(smoke(), smoke_data, tmp_path, seed=0)
        for name in ("config.json", "loss_log.csv", "curves.csv", "curves.png", "best.pt",
                     "codebook_usage.csv", "codebooks/vanilla.cb", "codebooks/collaborative.cb"):
            assert (tmp_path / name).exists(), name
        log = pd.read_csv(tmp_path / "loss_log.csv")
        assert list(log.columns) == LOSS_LOG_COLUMNS
        assert len(log) == 2 * 2
        assert list(result.curves.columns) == CURVE_COLUMNS
        assert len(result.curves) == 2
        assert np.isfinite(result.final_loss)
        assert result.final_gap == pytest.approx(result.curves["train_dsc"].iloc[-1] - result.curves["test_dsc"].iloc[-1])

    def test_deterministic_runs_match(self, smoke_data, tmp_path):
        config = smoke(run={"epochs": 1})
        first = train(config, smoke_data, tmp_path / "a", seed=0)
        second = train(config, smoke_data, tmp_path / "b", seed=0)
        assert first.final_loss == second.final_loss
        assert (tmp_path / "a" / "loss_log.csv").read_bytes() == (tmp_path / "b" / "loss_log.csv").read_bytes()
        for name, tensor in first.model.state_dict().items():
            assert torch.equal(tensor, second.model.state_dict()[name])

    def test_unused_codes_logged_as_warning(self, smoke_data, tmp_path):
        model = RegModel(smoke().network)
        for quantizer in model.vector_quantizers().values():
            quantizer.usage_counts.fill_(1)
        model.quantizer("vanilla").usage_counts[:3] = 0
        warnings = []
        sink = logger.add(lambda m: warnings.append(m.record["message"]), level="WARNING")
        try:
            usage = Trainer(smoke(), smoke_data, tmp_path)._log_usage(model, 1)
        finally:
            logger.remove(sink)
        assert warnings == ["epoch 1 vanilla: 3/8 codes unused"]
        assert usage["vanilla"].tolist()[:4] == [0, 0, 0, 1]

    def test_non_finite_loss_dumps_batch(self, smoke_data, tmp_path):
        def poisoned(s: RegistrationSample) -> RegistrationSample:
            data = np.array(s.moving.data)
            data[0, 0, 0] = np.nan
            return RegistrationSample(s.moving.with_data(data), s.fixed, s.moving_mask, s.fixed_mask,
                                      s.moving_landmarks, s.fixed_landmarks, s.subject_id)

        data = SplitDataset([poisoned(s) for s in smoke_data.train], smoke_data.val, smoke_data.test)
        config = smoke()
        config = config.model_copy(update={"network": config.network.with_quantizers([])})
        with pytest.raises(NonFiniteLossError) as info:
            train(config, data, tmp_path, seed=0)
        dump = torch.load(info.value.dump_path, weights_only=True)
        assert len(dump["subject_ids"]) > 0


class TestRegister:
    def test_identity_checkpoint(self, smoke_data, tmp_path):
        sample = smoke_data.test[0]
        save_sample(tmp_path / "pair", sample)
        checkpoint = tmp_path / "identity.pt"
        save_checkpoint(checkpoint, RegModel(smoke().network))
        files = {k: str(tmp_path / "pair" / v) for k, v in SAMPLE_FILES.items()}

        metrics = register_files(checkpoint, files["moving"], files["fixed"], tmp_path / "out" / "ddf.vol",
                                 moving_mask=files["moving_mask"], fixed_mask=files["fixed_mask"],
                                 moving_landmarks=files["moving_landmarks"], fixed_landmarks=files["fixed_landmarks"])
        warped = load_volume(tmp_path / "out" / "warped_moving.vol")
        assert np.array_equal(warped.data, load_volume(files["moving"]).data)
        assert np.all(load_ddf(tmp_path / "out" / "ddf.vol").data == 0)
        assert set(metrics) == {"MSE", "NegJac", "DSC", "CD", "TRE"}
        assert metrics["NegJac"] == 0.0

        again = register_files(checkpoint, files["moving"], files["fixed"], tmp_path / "out2" / "ddf.vol",
                               moving_mask=files["moving_mask"], fixed_mask=files["fixed_mask"],
                               moving_landmarks=files["moving_landmarks"], fixed_landmarks=files["fixed_landmarks"])
        assert again == metrics

    def test_errors(self, smoke_data, tmp_path):
        save_sample(tmp_path / "pair", smoke_data.test[0])
        moving, fixed = str(tmp_path / "pair" / "moving.vol"), str(tmp_path / "pair" / "fixed.vol")
        with pytest.raises(FileNotFoundError):
            register_files(tmp_path / "missing.pt", moving, fixed, tmp_path / "ddf.vol")
        other = smoke().network.model_copy(update={"input_dims": (16, 16, 32)})
        save_checkpoint(tmp_path / "other.pt", RegModel(other))
        with pytest.raises(ShapeMismatchError):
            register_files(tmp_path / "other.pt", moving, fixed, tmp_path / "ddf.vol")


class TestAblation:
    def test_parse_arm(self):
        assert parse_arm("none") == Arm("none", ())
        assert parse_arm("v+h") == Arm("v+h", ("vanilla", "hierarchical"))
        arm = parse_arm("v+c:random")
        assert arm.name == "v+c w/o pretrain" and not arm.needs_bootstrap
        assert parse_arm("h+v+c").quantizers == ("vanilla", "hierarchical", "collaborative")
        with pytest.raises(ValueError):
            parse_arm("v:warm")
        with pytest.raises(ValueError):
            parse_arm("v+x")

    def test_default_arm_order(self):
        assert [a.name for a in DEFAULT_ARMS] == ["none", "v", "v+h", "v+c w/o pretrain", "v+c", "v+h+c"]

    def test_small_ablation(self, smoke_data, tmp_path):
        config = smoke(run={"epochs": 1})
        arms = [parse_arm(a) for a in ("none", "v", "v+c:random")]
        result = run_ablation(config, smoke_data, tmp_path, arms, seeds=[0])
        assert [r.name for r in result.reports] == [UNREGISTERED, "none", "v", "v+c w/o pretrain"]
        for report in result.reports:
            assert len(report.rows) == len(smoke_data.test)
            assert list(report.rows["subject_id"]) == list(result.reports[0].rows["subject_id"])
        assert (tmp_path / "ablation.csv").exists() and (tmp_path / "gap_curves.png").exists()
        assert set(result.gaps) == {"none", "v", "v+c w/o pretrain"}
        identity = evaluate_identity(smoke_data.test)
        assert result.report(UNREGISTERED).aggregate()["DSC"] == identity.aggregate()["DSC"]

    def test_failed_arm_keeps_partial_results(self, smoke_data, tmp_path, monkeypatch):
        real_train = harness.ablation.train

        def flaky(config, *args, **kwargs):
            if config.network.enabled_quantizers:
                raise RuntimeError("boom")
            return real_train(config, *args, **kwargs)

        monkeypatch.setattr(harness.ablation, "train", flaky)
        with pytest.raises(AblationError) as info:
            run_ablation(smoke(run={"epochs": 1}), smoke_data, tmp_path, [parse_arm("none"), parse_arm("v")],
                         seeds=[0])
        assert [r.name for r in info.value.partial_results.reports] == [UNREGISTERED, "none"]
        assert (tmp_path / "ablation.csv").exists()


class TestSweep:
    def test_sized_config(self):
        config = smoke()
        assert sized_config(config, 16, "v").network.dict_sizes == (16, 8, 4)
        both = sized_config(config, 16, "both")
        assert both.network.dict_sizes == (16, 8, 16) and both.bootstrap.K_c == 16
        with pytest.raises(ConfigError):
            sized_config(config, 16, "h")

    def test_small_sweep(self, smoke_data, tmp_path):
        config = smoke(run={"epochs": 1})
        config = config.model_copy(update={"network": config.network.with_quantizers(["v"])})
        frame = run_dict_size_sweep(config, smoke_data, tmp_path, sizes=(4, 8), which="v", seeds=[0])
        assert list(frame["size"]) == [4, 8]
        assert (tmp_path / "sweep.csv").exists() and (tmp_path / "sweep.png").exists()


class TestCli:
    def test_parser(self):
        parser = make_parser()
        args = parser.parse_args(["ablate", "--profile", "smoke", "--arms", "none", "v+c:random", "--seeds", "0", "1"])
        assert args.command == "ablate" and args.arms == ["none", "v+c:random"] and args.seeds == [0, 1]
        args = parser.parse_args(["sweep-dict-size", "--which", "c", "--sizes", "32", "64"])
        assert args.which == "c" and args.sizes == [32, 64]
        with pytest.raises(SystemExit):
            parser.parse_args(["sweep-dict-size", "--which", "h"])

    def test_pipeline(self, tmp_path):
        parser = make_parser()
        data_dir, seg_dir, train_dir = tmp_path / "data", tmp_path / "seg", tmp_path / "train"
        run(parser.parse_args(["synth-data", "--profile", "smoke", "-o", str(data_dir)]))
        config = tmp_path / "smoke.toml"
        config.write_text(f'profile = "smoke"\n\n[data]\ndataset_dir = "{data_dir.as_posix()}"\n\n'
                          f'[run]\nepochs = 1\n', encoding="utf-8")
        run(parser.parse_args(["train-seg", "-c", str(config), "-o", str(seg_dir)]))
        run(parser.parse_args(["init-codebook", "-c", str(config), "-o", str(seg_dir),
                               "--seg-checkpoint", str(seg_dir / "seg.pt")]))
        run(parser.parse_args(["train", "-c", str(config), "-o", str(train_dir),
                               "--init-collaborative", str(seg_dir / "collaborative.cb")]))
        assert load_checkpoint(train_dir / "best.pt").quantizer("collaborative").init_kind.value == "kmeans"
        run(parser.parse_args(["evaluate", "-c", str(config), "-o", str(tmp_path / "eval"),
                               "--checkpoint", str(train_dir / "best.pt")]))
        assert (tmp_path / "eval" / "comparison.csv").exists()
        pair = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
        run(parser.parse_args(["register", "--checkpoint", str(train_dir / "best.pt"),
                               "--moving", str(pair / "moving.vol"), "--fixed", str(pair / "fixed.vol"),
                               "--out-ddf", str(tmp_path / "reg" / "ddf.vol")]))
        assert (tmp_path / "reg" / "warped_moving.vol").exists()

    def test_evaluate_uses_checkpoint_quantizers(self, tmp_path):
        parser = make_parser()
        data_dir = tmp_path / "data"
        run(parser.parse_args(["synth-data", "--profile", "smoke", "-o", str(data_dir)]))
        config = tmp_path / "smoke.toml"
        config.write_text(f'profile = "smoke"\n\n[data]\ndataset_dir = "{data_dir.as_posix()}"\n', encoding="utf-8")
        checkpoint = tmp_path / "v_only.pt"
        save_checkpoint(checkpoint, RegModel(smoke().network.with_quantizers(["v"])))

        run(parser.parse_args(["evaluate", "-c", str(config), "-o", str(tmp_path / "eval"),
                               "--checkpoint", str(checkpoint)]))
        rows = pd.read_csv(tmp_path / "eval" / "report_rows.csv")
        assert len(rows) == 1
        assert (tmp_path / "eval" / "comparison.csv").exists()

        other = tmp_path / "other.pt"
        save_checkpoint(other, RegModel(smoke().network.model_copy(update={"input_dims": (16, 16, 32)})))
        with pytest.raises(CheckpointMismatchError):
            load_for_evaluation(other, (16, 16, 16))

    def test_train_evaluate_repeatable(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VQREG_DETERMINISTIC", "1")
        parser = make_parser()
        data_dir = tmp_path / "data"
        run(parser.parse_args(["synth-data", "--profile", "smoke", "-o", str(data_dir)]))
        config = tmp_path / "smoke.toml"
        config.write_text(f'profile = "smoke"\n\n[data]\ndataset_dir = "{data_dir.as_posix()}"\n\n'
                          f'[run]\nepochs = 1\ndeterministic = true\n', encoding="utf-8")

        for name in ("a", "b"):
            run(parser.parse_args(["train", "-c", str(config), "-o", str(tmp_path / name / "train")]))
            run(parser.parse_args(["evaluate", "-c", str(config), "-o", str(tmp_path / name / "eval"),
                                   "--checkpoint", str(tmp_path / name / "train" / "best.pt")]))

        a, b = tmp_path / "a", tmp_path / "b"
        for name in ("train/loss_log.csv", "train/curves.csv", "train/codebook_usage.csv", "eval/report.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        # runtime_s 是墙钟时间，不参与比较
        rows_a = pd.read_csv(a / "eval" / "report_rows.csv").drop(columns="runtime_s")
        rows_b = pd.read_csv(b / "eval" / "report_rows.csv").drop(columns="runtime_s")
        pd.testing.assert_frame_equal(rows_a, rows_b)
        summary_a = json.loads((a / "eval" / "report.json").read_text())
        summary_b = json.loads((b / "eval" / "report.json").read_text())
        summary_a["aggregate"].pop("runtime_s")
        summary_b["aggregate"].pop("runtime_s")
        assert summary_a == summary_b
        state_a = load_checkpoint(a / "train" / "best.pt").state_dict()
        state_b = load_checkpoint(b / "train" / "best.pt").state_dict()
        assert all(torch.equal(state_a[k], state_b[k]) for k in state_a)


@pytest.mark.slow
def test_desk_training_lifts_dsc(tmp_path):
    config = build_config({}, "desk")
    data = build_dataset(config.data)
    result = train(config, data, tmp_path, seed=0)
    assert mean_dsc(result.model, data.test) >= unregistered_dsc(data.test) + 0.10


@pytest.mark.slow
def test_quantization_narrows_gap_and_orders_tre(tmp_path):
    config = build_config({}, "desk")
    data = build_dataset(config.data)
    arms = [parse_arm(a) for a in ("none", "v", "v+h+c")]
    result = run_ablation(config, data, tmp_path, arms, seeds=[0, 1, 2])
    assert result.gaps["v"] <= 0.8 * result.gaps["none"]
    assert ordering_violations(result) == [], result.reports
    assert result.mean("v+h+c", "DSC") >= result.mean("none", "DSC")
