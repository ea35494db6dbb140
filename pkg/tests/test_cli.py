"""CLI contract: artifacts, exit codes, determinism, replay, and reports."""

import hashlib

import pytest

from julesz.cli import (MANIFEST_FILE, PARAMS_FILE, REPORT_FILE, SAMPLES_FILE,
                        STYLIZED_FILE, main, read_manifest, replay_manifest)
from julesz.images import content_images, save_image, write_fixture


@pytest.fixture(scope="module")
def style_png(tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "checker.png"
    write_fixture("checker", path)
    return str(path)


@pytest.fixture(scope="module")
def content_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("content")
    for i, img in enumerate(content_images(3, size=16)):
        save_image(d / f"content_{i}.png", img)
    return str(d)


def _texture_args(style_png, out, extra=()):
    return ["train-texture", "--style", style_png, "--out", str(out),
            "--iters", "4", "--batch", "2", "--size", "16", "--noise-dim", "8",
            "--width", "8", "--hidden", "16", "--log-every", "2"] + list(extra)


def _file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestTrainTexture:
    def test_minimal_invocation_writes_artifacts(self, style_png, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_texture_args(style_png, out)) == 0
        for name in (PARAMS_FILE, REPORT_FILE, MANIFEST_FILE, SAMPLES_FILE):
            assert (out / name).exists(), name
        assert "train-texture:" in capsys.readouterr().out

    def test_zero_iterations_still_writes_artifacts(self, style_png, tmp_path):
        out = tmp_path / "run0"
        assert main(_texture_args(style_png, out, ["--iters", "0", "--lambda", "0.5"])) == 0
        report = (out / REPORT_FILE).read_text().strip().splitlines()
        assert len(report) == 1   # header only, no training rows
        assert (out / PARAMS_FILE).exists() and (out / SAMPLES_FILE).exists()

    def test_unknown_flag_is_usage_error(self, style_png, tmp_path, capsys):
        code = main(_texture_args(style_png, tmp_path / "x", ["--frobnicate"]))
        capsys.readouterr()
        assert code == 2

    def test_missing_style_file_is_runtime_error(self, tmp_path, capsys):
        code = main(_texture_args(str(tmp_path / "nope.png"), tmp_path / "x"))
        err = capsys.readouterr().err
        assert code == 1
        assert "error" in err

    def test_manifest_written_and_complete(self, style_png, tmp_path):
        out = tmp_path / "run_m"
        main(_texture_args(style_png, out, ["--seed", "3"]))
        entries = read_manifest(out / MANIFEST_FILE)
        assert entries["command"] == "train-texture"
        assert entries["config.seed"] == "3"
        assert entries["config.iterations"] == "4"
        assert len(entries["input.style.sha256"]) == 64

    def test_replay_is_byte_identical(self, style_png, tmp_path):
        out1 = tmp_path / "orig"
        assert main(_texture_args(style_png, out1, ["--seed", "5", "--lambda", "0.1"])) == 0
        out2 = tmp_path / "replayed"
        assert replay_manifest(out1 / MANIFEST_FILE, out2) == 0
        for name in (PARAMS_FILE, REPORT_FILE):
            assert _file_hash(out1 / name) == _file_hash(out2 / name), name

    def test_config_file_and_flag_precedence(self, style_png, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("iterations=2\nbatch_size=2\nout_size=16\nnoise_dim=8\n"
                            "width=8\nhidden=16\nseed=7\n")
        out = tmp_path / "cfg_run"
        code = main(["train-texture", "--style", style_png, "--out", str(out),
                     "--config", str(cfg_file), "--seed", "9"])
        assert code == 0
        entries = read_manifest(out / MANIFEST_FILE)
        assert entries["config.seed"] == "9"          # flag beats file
        assert entries["config.iterations"] == "2"    # file beats default

    def test_bad_config_key_rejected(self, style_png, tmp_path, capsys):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("not_a_field=1\n")
        code = main(["train-texture", "--style", style_png, "--out",
                     str(tmp_path / "x"), "--config", str(cfg_file)])
        capsys.readouterr()
        assert code == 1


class TestTrainStyle:
    def test_writes_stylized_grid(self, style_png, content_dir, tmp_path):
        out = tmp_path / "style_run"
        code = main(["train-style", "--style", style_png, "--content-dir", content_dir,
                     "--out", str(out), "--iters", "3", "--batch", "2", "--size", "16",
                     "--alpha", "1.0", "--noise-channels", "1", "--width", "8",
                     "--temp", "20", "--lr", "0.02", "--no-grad-normalize"])
        assert code == 0
        for name in (PARAMS_FILE, REPORT_FILE, MANIFEST_FILE, SAMPLES_FILE, STYLIZED_FILE):
            assert (out / name).exists(), name

    def test_alpha_zero_warns(self, style_png, content_dir, tmp_path, caplog):
        out = tmp_path / "alpha0"
        code = main(["train-style", "--style", style_png, "--content-dir", content_dir,
                     "--out", str(out), "--iters", "2", "--batch", "2", "--size", "16",
                     "--alpha", "0", "--noise-channels", "1", "--width", "8"])
        assert code == 0
        assert any("degenerates" in r.message for r in caplog.records)

    def test_empty_content_dir_rejected(self, style_png, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["train-style", "--style", style_png, "--content-dir", str(empty),
                     "--out", str(tmp_path / "x"), "--iters", "2"])
        err = capsys.readouterr().err
        assert code == 1 and "no .png" in err

    def test_corrupt_content_png_named(self, style_png, tmp_path, capsys):
        d = tmp_path / "corrupt_corpus"
        d.mkdir()
        (d / "bad_image.png").write_bytes(b"this is not a png")
        code = main(["train-style", "--style", style_png, "--content-dir", str(d),
                     "--out", str(tmp_path / "x"), "--iters", "2"])
        err = capsys.readouterr().err
        assert code == 1 and "bad_image.png" in err


@pytest.fixture(scope="module")
def trained(style_png, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    main(_texture_args(style_png, out))
    return out


class TestSample:
    def test_same_seed_same_files(self, trained, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            code = main(["sample", "--params", str(trained / PARAMS_FILE), "--n", "3",
                         "--seed", "11", "--out", str(d)])
            assert code == 0
        capsys.readouterr()
        for i in range(3):
            assert (_file_hash(a / f"sample_{i:02d}.png")
                    == _file_hash(b / f"sample_{i:02d}.png"))

    def test_prints_positive_diversity(self, trained, tmp_path, capsys):
        main(["sample", "--params", str(trained / PARAMS_FILE), "--n", "4",
              "--seed", "1", "--out", str(tmp_path / "s")])
        out = capsys.readouterr().out
        assert "diversity" in out
        assert float(out.split("diversity")[1].strip()) > 0.0

    def test_stylizer_requires_content(self, style_png, content_dir, tmp_path, capsys):
        out = tmp_path / "stylizer"
        main(["train-style", "--style", style_png, "--content-dir", content_dir,
              "--out", str(out), "--iters", "2", "--batch", "2", "--size", "16",
              "--alpha", "1.0", "--noise-channels", "1", "--width", "8"])
        code = main(["sample", "--params", str(out / PARAMS_FILE),
                     "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert code == 1 and "--content" in err


class TestGradcheckCommand:
    def test_default_passes(self, capsys):
        assert main(["gradcheck", "--only", "linear"]) == 0
        out = capsys.readouterr().out
        assert "pass" in out

    def test_impossible_tolerance_fails(self, capsys):
        assert main(["gradcheck", "--only", "instance_norm", "--tol", "1e-12"]) == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "worst" in out

    def test_unknown_filter_rejected(self, capsys):
        assert main(["gradcheck", "--only", "nonexistent_op"]) == 1
        capsys.readouterr()


class TestReportCommand:
    def _write_report(self, path, rows):
        lines = ["iteration,style,content,diversity,objective"]
        lines += [f"{i},{s},0.0,0.0,{s}" for i, s in rows]
        path.write_text("\n".join(lines) + "\n")

    def test_two_run_merge(self, tmp_path, capsys):
        a, b = tmp_path / "run_a.csv", tmp_path / "run_b.csv"
        self._write_report(a, [(0, 1.0), (1, 0.5)])
        self._write_report(b, [(0, 2.0), (1, 1.5), (2, 1.0)])
        out = tmp_path / "rep"
        assert main(["report", "--csv", str(a), "--csv", str(b), "--out", str(out)]) == 0
        capsys.readouterr()
        merged = (out / "merged.csv").read_text().strip().splitlines()
        assert len(merged) == 1 + 2 + 3   # header + one row per (run, iteration)
        dat = (out / "report.dat").read_text()
        assert "objective:run_a" in dat and "objective:run_b" in dat
        assert "summary run=run_a" in dat

    def test_single_run_passthrough_with_summary(self, tmp_path, capsys):
        a = tmp_path / "solo.csv"
        self._write_report(a, [(0, 3.0), (5, 1.0)])
        out = tmp_path / "rep1"
        assert main(["report", "--csv", str(a), "--out", str(out)]) == 0
        capsys.readouterr()
        dat = (out / "report.dat").read_text()
        assert "# summary run=solo" in dat and "final_objective=1.0" in dat

    def test_mismatched_columns_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("iteration,style\n0,1.0\n")
        assert main(["report", "--csv", str(bad), "--out", str(tmp_path / "x")]) == 1
        assert "header" in capsys.readouterr().err

    def test_malformed_row_named(self, tmp_path, capsys):
        bad = tmp_path / "rows.csv"
        bad.write_text("iteration,style,content,diversity,objective\n0,1.0,2.0\n")
        assert main(["report", "--csv", str(bad), "--out", str(tmp_path / "x")]) == 1
        assert "rows.csv:2" in capsys.readouterr().err
