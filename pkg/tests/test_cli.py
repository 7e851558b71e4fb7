import json

import numpy as np
import pytest

from text2traj.cli import main
from text2traj.dataio import read_corpus, read_embedding_cache

TINY_SET = [
    "--set", "latent_dim=16", "--set", "encoder_layers=1", "--set", "encoder_heads=2",
    "--set", "feedforward_dim=32", "--set", "decoder_hidden_dim=32",
    "--set", "grid_rows=2", "--set", "grid_cols=2", "--set", "num_frames=5",
    "--set", "epochs=2", "--set", "batch_size=4", "--set", "learning_rate=0.001",
    "--set", "use_image=false", "--set", "use_overlay_features=false",
]


def synth(tmp_path, name="corpus.l2m", per_class=3, classes="translate-left,expand"):
    path = tmp_path / name
    rc = main(["synth-data", "--classes", classes, "--per-class", str(per_class),
               "--seed", "3", "--out", str(path),
               "--grid", "2x2", "--frames", "5"])
    assert rc == 0
    return path


def train_tiny(tmp_path, corpus, extra=()):
    out = tmp_path / "run"
    rc = main(["train", "--corpus", str(corpus), "--out", str(out), *TINY_SET, *extra])
    assert rc == 0
    return out / "final.l2mc"


class TestBasics:
    def test_version_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.startswith("text2traj ")

    def test_help_every_subcommand(self):
        for cmd in ("synth-data", "embed-cache", "train", "generate", "retrieve",
                    "evaluate", "interpolate", "classify", "render", "ablate"):
            with pytest.raises(SystemExit) as exc:
                main([cmd, "--help"])
            assert exc.value.code == 0

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth-data", "--bogus"])
        assert exc.value.code == 1

    def test_missing_file_exits_two(self, tmp_path):
        rc = main(["retrieve", "--ckpt", str(tmp_path / "none.l2mc"),
                   "--corpus", str(tmp_path / "none.l2m")])
        assert rc == 2

    def test_validation_error_exits_two(self, tmp_path):
        bad = tmp_path / "bad.l2m"
        bad.write_text("{broken\n")
        rc = main(["render", "--traj", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_bad_flag_value_exits_one(self, tmp_path):
        corpus = synth(tmp_path)
        ckpt = train_tiny(tmp_path, corpus, extra=["--set", "epochs=0"])
        rc = main(["retrieve", "--ckpt", str(ckpt), "--corpus", str(corpus),
                   "--k", "1,zebra"])
        assert rc == 1


class TestPipeline:
    def test_synth_data_writes_corpus(self, tmp_path):
        path = synth(tmp_path)
        corpus = read_corpus(path)
        assert len(corpus) == 6
        assert corpus[0].num_frames == 5

    def test_embed_cache(self, tmp_path):
        corpus = synth(tmp_path)
        cache_path = tmp_path / "cache.l2me"
        rc = main(["embed-cache", "--corpus", str(corpus), "--provider", "stub",
                   "--dim", "16", "--out", str(cache_path), "--no-overlays"])
        assert rc == 0
        cache = read_embedding_cache(cache_path)
        assert any(k.startswith("text:") for k in cache)
        assert all(v.shape == (16,) for v in cache.values())

    def test_full_pipeline_with_cache_provider(self, tmp_path, capsys):
        corpus = synth(tmp_path)
        cache_path = tmp_path / "cache.l2me"
        assert main(["embed-cache", "--corpus", str(corpus), "--provider", "stub",
                     "--dim", "16", "--out", str(cache_path), "--no-overlays"]) == 0
        ckpt = train_tiny(tmp_path, corpus, extra=["--cache", str(cache_path)])
        assert ckpt.exists()
        assert (ckpt.parent / "train_log.jsonl").exists()

        assert main(["retrieve", "--ckpt", str(ckpt), "--corpus", str(corpus),
                     "--k", "1,2", "--cache", str(cache_path)]) == 0
        out = capsys.readouterr().out
        values = [float(line.split()[1]) for line in out.splitlines()
                  if line.startswith("R@")]
        assert len(values) == 2 and all(0.0 <= v <= 100.0 for v in values)

        report_path = tmp_path / "report.json"
        assert main(["evaluate", "--ckpt", str(ckpt), "--corpus", str(corpus),
                     "--out", str(report_path), "--cache", str(cache_path),
                     "--retrieval-k", "1,6"]) == 0
        report = json.loads(report_path.read_text())
        assert "ade" in report["aggregates"]
        assert report["retrieval"]["6"] == 100.0

    def test_train_generate_render_classify(self, tmp_path, capsys):
        corpus = synth(tmp_path)
        ckpt = train_tiny(tmp_path, corpus)

        traj_path = tmp_path / "gen.l2m"
        render_dir = tmp_path / "frames"
        rc = main(["generate", "--ckpt", str(ckpt), "--text", "object moving left",
                   "--bbox", "100,100,200,200", "--frame", "640x480",
                   "--mode", "ar", "--out", str(traj_path),
                   "--render", str(render_dir)])
        assert rc == 0
        gen = read_corpus(traj_path)
        assert len(gen) == 1 and gen[0].num_frames == 5
        assert len(list(render_dir.glob("*.png"))) == 5

        assert main(["classify", "--ckpt", str(ckpt), "--corpus", str(corpus),
                     "--classes", "translate-left,expand"]) == 0
        out = capsys.readouterr().out
        assert "Top-1 accuracy" in out and "Top-5 accuracy" in out

    def test_generate_zero_trained_static(self, tmp_path):
        corpus = synth(tmp_path)
        ckpt = train_tiny(tmp_path, corpus, extra=["--set", "epochs=0"])
        traj_path = tmp_path / "gen.l2m"
        assert main(["generate", "--ckpt", str(ckpt), "--text", "object moving left",
                     "--bbox", "100,100,200,200", "--frame", "640x480",
                     "--out", str(traj_path)]) == 0
        seq = read_corpus(traj_path)[0]
        # untrained decoder output layers are zero: static grid
        drift = np.abs(seq.points_px - seq.points_px[0]).max()
        assert drift < 1e-2

    def test_interpolate(self, tmp_path):
        corpus = synth(tmp_path)
        ckpt = train_tiny(tmp_path, corpus)
        out = tmp_path / "interp.l2m"
        assert main(["interpolate", "--ckpt", str(ckpt),
                     "--text-a", "object moving left", "--text-b", "points expanding",
                     "--alphas", "0,0.5,1", "--bbox", "100,100,200,200",
                     "--frame", "640x480", "--out", str(out)]) == 0
        assert len(read_corpus(out)) == 3

    def test_render_style(self, tmp_path):
        corpus = synth(tmp_path, per_class=1, classes="stationary")
        out_dir = tmp_path / "rendered"
        assert main(["render", "--traj", str(corpus), "--index", "0",
                     "--style", "color=255,0,0,opacity=1.0", "--out", str(out_dir)]) == 0
        assert len(list(out_dir.glob("*.png"))) == 5

    def test_train_with_overlays_from_cache(self, tmp_path):
        path = tmp_path / "corpus.l2m"
        assert main(["synth-data", "--classes", "translate-left,expand",
                     "--per-class", "2", "--seed", "3", "--out", str(path),
                     "--grid", "2x2", "--frames", "5", "--frame", "64x48"]) == 0
        cache_path = tmp_path / "cache.l2me"
        overlay_set = [s.replace("use_image=false", "use_image=true")
                       .replace("use_overlay_features=false", "use_overlay_features=true")
                       for s in TINY_SET]
        assert main(["embed-cache", "--corpus", str(path), "--provider", "stub",
                     "--dim", "16", "--out", str(cache_path), *overlay_set]) == 0
        out = tmp_path / "run"
        assert main(["train", "--corpus", str(path), "--out", str(out),
                     *overlay_set, "--cache", str(cache_path)]) == 0
        assert (out / "final.l2mc").exists()

    def test_train_config_file_and_resume(self, tmp_path):
        corpus = synth(tmp_path)
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("\n".join([
            "latent_dim = 16", "encoder_layers = 1", "encoder_heads = 2",
            "feedforward_dim = 32", "decoder_hidden_dim = 32",
            "grid_rows = 2", "grid_cols = 2", "num_frames = 5",
            "epochs = 2", "batch_size = 4", "use_image = false",
            "use_overlay_features = false",
        ]) + "\n")
        out = tmp_path / "run"
        assert main(["train", "--corpus", str(corpus), "--config", str(cfg_path),
                     "--out", str(out)]) == 0
        assert main(["train", "--corpus", str(corpus), "--config", str(cfg_path),
                     "--set", "epochs=3", "--out", str(tmp_path / "run2"),
                     "--resume", str(out / "state_final.l2mc")]) == 0

    def test_ablate(self, tmp_path, capsys):
        corpus = synth(tmp_path, per_class=4)
        table_path = tmp_path / "table.json"
        rc = main(["ablate", "--corpus", str(corpus), "--axis", "recon-norm",
                   *TINY_SET, "--set", "epochs=1", "--out", str(table_path)])
        assert rc == 0
        table = json.loads(table_path.read_text())
        assert [row["variant"] for row in table["rows"]] == ["L1", "L2"]
        assert all("ade" in row for row in table["rows"])
        out = capsys.readouterr().out
        assert "variant" in out
