import numpy as np
import pytest

from rgif import cli
from rgif.image import Image, load_image, save_image
from rgif.kernels import parse_value, preset

from test_kernels import COLUMNS, LITERAL_TABLE


def printed_params(capsys, *argv):
    assert cli.main(list(argv) + ["--print-params"]) == 0
    out = capsys.readouterr().out
    pairs = (line.split(" = ") for line in out.splitlines())
    return {k: parse_value(k, v) for k, v in pairs}


@pytest.fixture
def gray(tmp_path):
    rng = np.random.default_rng(0)
    img = np.where(np.arange(16)[None, :] < 8, 60.0, 190.0) + rng.normal(0, 6, (16, 16))
    path = tmp_path / "in.pgm"
    save_image(Image(np.clip(img, 0, 255)), path, bitdepth=8)
    return path


@pytest.fixture
def depth_pair(tmp_path):
    rng = np.random.default_rng(1)
    color = rng.uniform(0, 255, (16, 16, 3))
    low = np.full((4, 4), 3000.0)
    low[:, 2:] = 9000.0
    save_image(Image(color), tmp_path / "color.ppm", bitdepth=8)
    save_image(Image(low), tmp_path / "depth.pgm", bitdepth=16)
    return tmp_path / "depth.pgm", tmp_path / "color.ppm"


# -- parsing ------------------------------------------------------------------------

def test_print_params_depth_factor(capsys):
    assert printed_params(capsys, "depth-upsample", "--factor", "8")["alpha"] == 0.9


@pytest.mark.parametrize("app", sorted(LITERAL_TABLE))
def test_print_params_matches_table(capsys, app):
    shown = printed_params(capsys, app)
    assert shown == preset(app).as_dict()
    for col, expected in zip(COLUMNS, LITERAL_TABLE[app]):
        if expected is not None:
            assert shown[col] == expected, (app, col)


def test_invalid_alpha_is_usage_error(gray, tmp_path):
    assert cli.main(["texture-smooth", str(gray), str(tmp_path / "o.pgm"), "--alpha", "1.0"]) == 1


def test_config_then_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("# smoothing\nlambda_s = 12\nr-d = 2  # dashes are fine\n")
    shown = printed_params(capsys, "texture-smooth", "--config", str(cfg), "--lambda_s", "20")
    assert shown["lambda_s"] == 20 and shown["r_d"] == 2
    shown = printed_params(capsys, "texture-smooth", "--config", str(cfg))
    assert shown["lambda_s"] == 12
    assert printed_params(capsys, "texture-smooth", "--lambda-s", "3")["lambda_s"] == 3


@pytest.mark.parametrize("argv", [
    ["texture-smooth", "a.pgm", "b.pgm", "--bogus", "1"],
    ["texture-smooth", "a.pgm"],
    ["sharpen", "a.pgm", "b.pgm"],
    ["depth-upsample", "d.pgm", "c.ppm", "o.pgm", "--factor", "3"],
    ["texture-smooth", "a.pgm", "b.pgm", "--r_s", "2.5"],
    ["texture-smooth", "a.pgm", "b.pgm", "--threads", "0"],
])
def test_usage_errors(argv):
    with pytest.raises(cli.UsageError):
        cli.parse_args(argv)
    assert cli.main(argv) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("lambda_z = 3\n")
    assert cli.main(["dejpeg", "a.png", "b.png", "--config", str(cfg)]) == 1


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("RGIF_THREADS", "3")
    assert cli.parse_args(["dejpeg", "a.png", "b.png"]).threads == 3
    assert cli.parse_args(["dejpeg", "a.png", "b.png", "--threads", "2"]).threads == 2
    monkeypatch.setenv("RGIF_THREADS", "many")
    with pytest.raises(cli.UsageError):
        cli.parse_args(["dejpeg", "a.png", "b.png"])


# -- running ------------------------------------------------------------------------

def test_texture_smooth_run(gray, tmp_path):
    out = tmp_path / "out.pgm"
    assert cli.main(["texture-smooth", str(gray), str(out)]) == 0
    assert out.exists() and load_image(out).shape == (16, 16, 1)


def test_missing_input_is_io_error(tmp_path):
    assert cli.main(["texture-smooth", str(tmp_path / "nope.pgm"), str(tmp_path / "o.pgm")]) == 2


def test_corrupt_input_is_io_error(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n8 8\n255\n" + bytes(3))
    assert cli.main(["dejpeg", str(bad), str(tmp_path / "o.pgm")]) == 2


def test_metrics_identical(gray, capsys):
    assert cli.main(["metrics", str(gray), str(gray)]) == 0
    assert capsys.readouterr().out == "mae,0\n"


def test_metrics_value(tmp_path, capsys):
    save_image(Image(np.zeros((2, 2))), tmp_path / "a.pgm", bitdepth=8)
    save_image(Image(np.array([[0.0, 4.0], [2.0, 2.0]])), tmp_path / "b.pgm", bitdepth=8)
    assert cli.main(["metrics", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm")]) == 0
    assert capsys.readouterr().out == "mae,2\n"


def test_nonconvergence_exit_3(gray, tmp_path, capsys):
    out = tmp_path / "o.pgm"
    code = cli.main(["texture-smooth", str(gray), str(out), "--irls_maxit", "1", "--irls_tol", "1e-9"])
    assert code == 3 and out.exists()
    assert "warning" in capsys.readouterr().err


def test_trace_csv(gray, tmp_path):
    trace = tmp_path / "t.csv"
    cli.main(["filter", str(gray), str(tmp_path / "o.pgm"), "--r_d", "1", "--r_s", "2",
              "--trace", str(trace)])
    lines = trace.read_text().splitlines()
    assert lines[0] == "iteration,mad,energy,pcg_iters"
    its = [int(line.split(",")[0]) for line in lines[1:]]
    assert its == list(range(1, len(its) + 1))


def test_depth_upsample_with_lambda_map(depth_pair, tmp_path):
    depth, color = depth_pair
    out, lam = tmp_path / "o.pgm", tmp_path / "lam.pfm"
    code = cli.main(["depth-upsample", str(depth), str(color), str(out), "--factor", "4",
                     "--r_d", "2", "--r_s", "2", "--lambda-map", str(lam)])
    assert code == 0
    img = load_image(out)
    assert img.shape == (16, 16, 1) and img.bitdepth == 16
    values = load_image(lam).data
    assert values.shape == (16, 16, 1) and values.min() >= 0.5 and values.max() <= 100


def test_lambda_map_pgm_sidecar(tmp_path):
    values = np.array([[0.5, 7.0], [100.0, 3.0]])
    cli.write_lambda_map(str(tmp_path / "l.pgm"), values)
    scale = float((tmp_path / "l.pgm.scale").read_text())
    back = load_image(tmp_path / "l.pgm").data[:, :, 0] / 65535.0 * scale
    np.testing.assert_allclose(back, values, atol=scale / 65535)


def test_tonemap_needs_pfm(gray, tmp_path):
    assert cli.main(["tonemap", str(gray), str(tmp_path / "o.png")]) == 1


def test_threads_bit_identical(tmp_path):
    rgb = np.random.default_rng(2).uniform(0, 255, (16, 16, 3))
    save_image(Image(rgb), tmp_path / "c.ppm", bitdepth=8)
    outs, codes = [], []
    for n in ("1", "4"):
        out = tmp_path / f"o{n}.pfm"
        # pure noise may hit irls_maxit (exit 3); either way both runs must agree
        codes.append(cli.main(["dejpeg", str(tmp_path / "c.ppm"), str(out), "--deterministic",
                               "--threads", n]))
        outs.append(out.read_bytes())
    assert codes[0] == codes[1] and codes[0] in (0, 3)
    assert outs[0] == outs[1]
