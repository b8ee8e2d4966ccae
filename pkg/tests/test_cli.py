import json
import subprocess
import sys

import numpy as np
import pytest

from hod.cli import main
from hod.runconfig import load_run_config, run_config_from_dict
from hod.errors import ConfigError


TRAIN_TOML = """
n_merges = 16

[model]
embed_dim = 16
n_layers = 1
n_heads = 4
patch_size = 8
image_size = 16
frames_low = 2
rate_multiplier = 2
max_text_len = 24

[train]
lr = 1e-3
epochs = 3
batch_size = 6
seed = 0
"""


def run(argv):
    return main(argv)


@pytest.fixture()
def synth_files(tmp_path):
    det = tmp_path / "det.jsonl"
    pairs = tmp_path / "pairs.jsonl"
    code = run([
        "synth", "--seed", "3", "--n-clips", "6",
        "--out-detections", str(det), "--out-pairs", str(pairs),
    ])
    assert code == 0
    return det, pairs


class TestSynthCommand:
    def test_outputs_written_and_deterministic(self, tmp_path):
        paths = []
        for tag in ("a", "b"):
            det = tmp_path / f"det-{tag}.jsonl"
            pairs = tmp_path / f"pairs-{tag}.jsonl"
            assert run([
                "synth", "--seed", "5", "--n-clips", "4",
                "--out-detections", str(det), "--out-pairs", str(pairs),
            ]) == 0
            paths.append((det.read_bytes(), pairs.read_bytes()))
        assert paths[0] == paths[1]


class TestGenCommand:
    def test_offline_enrichment(self, synth_files, tmp_path):
        det, pairs = synth_files
        out = tmp_path / "enriched.jsonl"
        assert run([
            "gen", "--detections", str(det), "--narrations", str(pairs),
            "--out", str(out), "--seed", "1",
        ]) == 0
        records = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(records) == 6
        pair_records = [json.loads(l) for l in pairs.read_text().splitlines()]
        for rec, pair in zip(records, pair_records):
            assert rec["clip_id"] == pair["clip_id"]
            assert rec["original"] == pair["caption"]
            assert pair["caption"] in rec["enriched"]
            assert f"moves {pair['direction']}" in rec["enriched"]
            assert rec["provenance"] == "offline_template"
            assert rec["generator_seed"] == 1

    def test_byte_identical_across_runs(self, synth_files, tmp_path):
        det, pairs = synth_files
        outs = []
        for tag in ("x", "y"):
            out = tmp_path / f"enriched-{tag}.jsonl"
            cmd = [
                sys.executable, "-m", "hod.cli",
                "gen", "--detections", str(det), "--narrations", str(pairs),
                "--out", str(out), "--seed", "0",
            ]
            proc = subprocess.run(cmd, capture_output=True)
            assert proc.returncode == 0, proc.stderr.decode()
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_pixel_space_detections_match_normalized(self, synth_files, tmp_path):
        det, pairs = synth_files
        # Scale the normalized boxes back to pixels; synth boxes come from
        # integer pixel corners, so the round trip is exact.
        pixel_det = tmp_path / "det-px.jsonl"
        rows = []
        for line in det.read_text().splitlines():
            obj = json.loads(line)
            w, h = obj["w"], obj["h"]
            for frame in obj["frames"]:
                for key in ("lh", "rh", "lo", "ro"):
                    if frame[key] is not None:
                        x1, y1, x2, y2 = frame[key]
                        frame[key] = [x1 * w, y1 * h, x2 * w, y2 * h]
            rows.append(obj)
        pixel_det.write_text("".join(json.dumps(r) + "\n" for r in rows))

        out_norm = tmp_path / "enr-norm.jsonl"
        out_px = tmp_path / "enr-px.jsonl"
        assert run(["gen", "--detections", str(det), "--narrations", str(pairs),
                    "--out", str(out_norm)]) == 0
        assert run(["gen", "--detections", str(pixel_det), "--narrations", str(pairs),
                    "--out", str(out_px), "--pixels"]) == 0
        assert out_norm.read_bytes() == out_px.read_bytes()

    def test_unreachable_llm_endpoint_exits_three(self, synth_files, tmp_path):
        det, pairs = synth_files
        out = tmp_path / "enriched.jsonl"
        code = run([
            "gen", "--detections", str(det), "--narrations", str(pairs),
            "--out", str(out),
            "--llm-endpoint", "http://127.0.0.1:1/nowhere",
            "--llm-timeout", "0.2", "--llm-retries", "1",
        ])
        assert code == 3
        assert not out.exists()

    def test_missing_narration_is_data_error(self, synth_files, tmp_path):
        det, _ = synth_files
        narr = tmp_path / "narr.jsonl"
        narr.write_text('{"clip_id": "other", "narration": "C waits"}\n')
        out = tmp_path / "enriched.jsonl"
        code = run([
            "gen", "--detections", str(det), "--narrations", str(narr), "--out", str(out),
        ])
        assert code == 2
        assert not out.exists()

    def test_usage_error_exits_one(self, capsys):
        with pytest.raises(SystemExit) as err:
            run(["gen", "--detections", "only.jsonl"])
        assert err.value.code == 1


class TestStatsCommand:
    def test_csv_written(self, synth_files, tmp_path):
        det, pairs = synth_files
        enriched = tmp_path / "enriched.jsonl"
        run(["gen", "--detections", str(det), "--narrations", str(pairs), "--out", str(enriched)])
        out = tmp_path / "freq.csv"
        assert run(["stats", "--narrations", str(enriched), "--top-k", "5", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "token,frequency"
        assert len(lines) == 6
        freqs = [float(l.split(",")[1]) for l in lines[1:]]
        assert freqs == sorted(freqs, reverse=True)

    def test_enriched_corpus_surfaces_direction_words(self, synth_files, tmp_path):
        # Enrichment injects motion vocabulary into the corpus statistics.
        det, pairs = synth_files
        enriched = tmp_path / "enriched.jsonl"
        run(["gen", "--detections", str(det), "--narrations", str(pairs), "--out", str(enriched)])
        out = tmp_path / "freq30.csv"
        assert run(["stats", "--narrations", str(enriched), "--top-k", "30", "--out", str(out)]) == 0
        tokens = {line.split(",")[0] for line in out.read_text().splitlines()[1:]}
        assert tokens & {"up", "down", "left", "right"}
        assert "moves" in tokens

    def test_empty_corpus_is_data_error(self, tmp_path):
        empty = tmp_path / "none.jsonl"
        empty.write_text("")
        assert run(["stats", "--narrations", str(empty), "--out", str(tmp_path / "f.csv")]) == 2


class TestFilterCommands:
    def write_features(self, tmp_path, n=60):
        rng = np.random.default_rng(8)
        path = tmp_path / "feats.jsonl"
        rows = []
        for i in range(n):
            label = i % 2
            center = 2.0 if label else -2.0
            feat = (rng.normal(center, 0.4, 3)).tolist()
            rows.append({"clip_id": f"c{i}", "feature": feat, "label": label})
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return path

    def test_train_then_apply(self, tmp_path, capsys):
        feats = self.write_features(tmp_path)
        clf = tmp_path / "clf.bin"
        assert run([
            "filter", "train", "--data", str(feats), "--out", str(clf),
            "--hidden", "8", "--epochs", "300", "--seed", "0",
        ]) == 0
        kept = tmp_path / "kept.jsonl"
        assert run([
            "filter", "apply", "--data", str(feats), "--clf", str(clf),
            "--threshold", "0.5", "--out", str(kept),
        ]) == 0
        records = [json.loads(l) for l in kept.read_text().splitlines()]
        assert 0 < len(records) < 60
        assert all(r["score"] > 0.5 for r in records)

    def test_missing_label_is_data_error(self, tmp_path):
        path = tmp_path / "feats.jsonl"
        path.write_text('{"clip_id": "a", "feature": [1, 2]}\n')
        assert run(["filter", "train", "--data", str(path), "--out", str(tmp_path / "c.bin")]) == 2


class TestModelCommands:
    def test_train_eval_cycle(self, tmp_path):
        det = tmp_path / "det.jsonl"
        pairs = tmp_path / "pairs.jsonl"
        run(["synth", "--seed", "2", "--n-clips", "6",
             "--out-detections", str(det), "--out-pairs", str(pairs)])
        config = tmp_path / "train.toml"
        config.write_text(TRAIN_TOML)
        ckpt = tmp_path / "ckpt"
        assert run(["model", "train", "--config", str(config),
                    "--data", str(pairs), "--out", str(ckpt)]) == 0
        assert (ckpt / "manifest.json").exists()
        assert (ckpt / "params.bin").exists()
        assert (ckpt / "tokenizer.json").exists()

        for task in ("retrieval", "mcq", "cls"):
            report_path = tmp_path / f"report-{task}.json"
            assert run(["model", "eval", "--task", task, "--ckpt", str(ckpt),
                        "--data", str(pairs), "--report", str(report_path)]) == 0
            report = json.loads(report_path.read_text())
            assert report["task"] == task
            assert report["n_items"] == 6
            assert "metrics" in report

    def test_float32_training_precision(self, tmp_path):
        det = tmp_path / "det.jsonl"
        pairs = tmp_path / "pairs.jsonl"
        run(["synth", "--seed", "4", "--n-clips", "6",
             "--out-detections", str(det), "--out-pairs", str(pairs)])
        config = tmp_path / "train32.toml"
        config.write_text(TRAIN_TOML.replace('seed = 0', 'seed = 0\nprecision = "float32"'))
        ckpt = tmp_path / "ckpt32"
        assert run(["model", "train", "--config", str(config),
                    "--data", str(pairs), "--out", str(ckpt)]) == 0
        manifest = json.loads((ckpt / "manifest.json").read_text())
        assert all(t["dtype"] == "<f4" for t in manifest["tensors"])
        report_path = tmp_path / "report32.json"
        assert run(["model", "eval", "--task", "retrieval", "--ckpt", str(ckpt),
                    "--data", str(pairs), "--report", str(report_path)]) == 0

    def test_eval_without_tokenizer_is_data_error(self, tmp_path):
        from hod.checkpoint import save_checkpoint
        from hod.model import ModelConfig, VideoTextModel

        cfg = ModelConfig(
            embed_dim=16, n_layers=1, n_heads=4, patch_size=8, image_size=16,
            frames_low=2, rate_multiplier=2, vocab_size=16, max_text_len=24,
        )
        ckpt = tmp_path / "bare"
        save_checkpoint(VideoTextModel(cfg, seed=0), str(ckpt))
        pairs = tmp_path / "pairs.jsonl"
        run(["synth", "--seed", "1", "--n-clips", "5",
             "--out-detections", str(tmp_path / "d.jsonl"), "--out-pairs", str(pairs)])
        code = run(["model", "eval", "--task", "retrieval", "--ckpt", str(ckpt),
                    "--data", str(pairs), "--report", str(tmp_path / "r.json")])
        assert code == 2

    def test_gradcheck_with_config(self, tmp_path, capsys):
        config = tmp_path / "train.toml"
        config.write_text(TRAIN_TOML)
        assert run(["model", "gradcheck", "--config", str(config)]) == 0
        assert "motion_adapter_block" in capsys.readouterr().out

    def test_params_command_with_verify(self, tmp_path, capsys):
        config = tmp_path / "train.toml"
        config.write_text(TRAIN_TOML)
        assert run(["model", "params", "--config", str(config), "--verify"]) == 0
        out = capsys.readouterr().out
        assert "total" in out and "verified" in out

    def test_gradcheck_command(self, capsys):
        assert run(["model", "gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "motion_adapter_block" in out
        assert "FAIL" not in out


class TestRunConfig:
    def test_example_config_loads(self):
        cfg = load_run_config("configs/desk.toml")
        assert cfg.model.embed_dim == 32
        assert cfg.train.temperature == 0.07

    def test_defaults_carry_reference_values(self):
        cfg = run_config_from_dict({})
        assert cfg.model.frames_low == 4
        assert cfg.model.rate_multiplier == 4
        assert cfg.model.adapter_ratio == 0.5
        assert cfg.train.temperature == 0.07

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            run_config_from_dict({"train": {"learning_rate": 0.1}})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="optimizer"):
            run_config_from_dict({"optimizer": {}})

    def test_bad_config_file_exits_one(self, tmp_path):
        config = tmp_path / "bad.toml"
        config.write_text("[model]\nembed_dim = 7\nn_heads = 4\n")
        assert run(["model", "params", "--config", str(config)]) == 1

    def test_missing_config_file_exits_one(self):
        assert run(["model", "params", "--config", "no-such-file.toml"]) == 1
