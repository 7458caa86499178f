import json
import os
import subprocess

import numpy as np
import pytest

import mda


@pytest.fixture(scope="module")
def pair():
    return mda.synthetic_pair(48, 48, 3)


def test_synthetic_pair_shapes(pair):
    assert pair["ir"].shape == (48, 48)
    assert pair["vis"].shape == (48, 48, 3)
    assert pair["vis_y"].shape == (48, 48)
    for key in ("ir", "vis", "vis_y"):
        assert pair[key].min() >= 0.0 and pair[key].max() <= 1.0
    again = mda.synthetic_pair(48, 48, 3)
    np.testing.assert_array_equal(again["ir"], pair["ir"])


def test_luma_matches_bt601(pair):
    rgb = pair["vis"]
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    np.testing.assert_allclose(pair["vis_y"], y, atol=1e-12)


def test_weights_are_normalized(pair):
    w = mda.image_weights(pair["ir"], pair["vis_y"])
    assert w["int_ir"] + w["int_vis"] == pytest.approx(1.0, abs=1e-12)
    assert w["grad_ir"] + w["grad_vis"] == pytest.approx(1.0, abs=1e-12)
    same = mda.image_weights(pair["ir"], pair["ir"])
    assert same == {"int_ir": 0.5, "int_vis": 0.5, "grad_ir": 0.5, "grad_vis": 0.5}
    cells = mda.patch_weights(pair["ir"], pair["vis_y"])
    assert [(c["y"], c["x"]) for c in cells] == [(0, 0), (0, 21), (21, 0), (21, 21)]
    for c in cells:
        assert c["int_ir"] + c["int_vis"] == pytest.approx(1.0, abs=1e-12)


def test_metrics_against_numpy(pair):
    f = pair["vis_y"]
    q = np.clip(np.rint(f * 255), 0, 255)
    assert mda.metric("sd", f, pair["ir"], f) == pytest.approx(q.std(), rel=1e-9)
    assert mda.metric("cc", f, f, f) == pytest.approx(1.0, abs=1e-12)
    assert mda.metric("en", np.full((16, 16), 0.3), f[:16, :16], f[:16, :16]) == 0.0
    assert "qabf" in mda.metric_names()
    with pytest.raises(ValueError):
        mda.metric("psnr", f, f, f)


def test_fuse_any_size(tmp_path, pair):
    ckpt = str(tmp_path / "model.mda")
    mda.init_model(ckpt, seed=1, channels=4)
    out = mda.fuse(pair["ir"][:30, :27], pair["vis_y"][:30, :27], ckpt)
    assert out.shape == (30, 27)
    assert np.all((out >= 0) & (out <= 1))
    with pytest.raises(ValueError):
        mda.fuse(pair["ir"], pair["vis_y"][:40], ckpt)


def test_corrupt_checkpoint_raises(tmp_path, pair):
    bad = tmp_path / "bad.mda"
    bad.write_bytes(b"garbage")
    with pytest.raises(mda.IntegrityError):
        mda.fuse(pair["ir"], pair["vis_y"], str(bad))


@pytest.mark.skipif("MDA_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_fixtures_and_eval(tmp_path):
    cli = os.environ["MDA_CLI"]
    fx = tmp_path / "fx"
    subprocess.run([cli, "make-fixtures", "--out", str(fx), "--n", "2", "--seed", "5", "--size", "40"], check=True)
    report = tmp_path / "r.json"
    subprocess.run(
        [cli, "eval", "--manifest", str(fx / "manifest.jsonl"), "--fused", str(fx / "ir"), "--out", str(report),
         "--metrics", "en,sd"],
        check=True,
    )
    data = json.loads(report.read_text())
    assert data["metrics"] == ["en", "sd"]
    bad = subprocess.run([cli, "eval", "--manifest", str(fx / "manifest.jsonl")], capture_output=True)
    assert bad.returncode == 1


@pytest.mark.skipif("MDA_CLI" not in os.environ, reason="CLI path not provided")
def test_exported_backbone_archive_loads(tmp_path):
    import importlib.util

    tools = os.path.join(os.path.dirname(__file__), "..", "..", "tools", "export_vgg16.py")
    spec = importlib.util.spec_from_file_location("export_vgg16", tools)
    export = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(export)

    rng = np.random.default_rng(0)
    sd, cin = {}, 3
    for stage, width in zip(export.STAGES, [64, 128, 256, 512, 512]):
        for _, idx in stage:
            sd[f"features.{idx}.weight"] = rng.normal(0, 0.05, (width, cin, 3, 3))
            sd[f"features.{idx}.bias"] = rng.normal(0, 0.01, width)
            cin = width
    archive = tmp_path / "vgg16.mda"
    export.write_archive(archive, "vgg16", export.vgg16_arrays(sd), {"provenance": "pretrained", "depth": 5})

    fx = tmp_path / "fx"
    subprocess.run([os.environ["MDA_CLI"], "make-fixtures", "--out", str(fx), "--n", "1", "--seed", "2", "--size", "48"],
                   check=True)
    args = [os.environ["MDA_CLI"], "weights-dump", "--ir", str(fx / "ir" / "pair_000.png"), "--vis",
            str(fx / "vis" / "pair_000.png"), "--out", str(tmp_path / "w"), "--backbone", str(archive)]
    assert subprocess.run(args).returncode == 0
    w = json.loads((tmp_path / "w" / "weights.json").read_text())
    assert w["int_ir"] + w["int_vis"] == pytest.approx(1.0)

    data = bytearray(archive.read_bytes())
    data[-5] ^= 0xFF
    archive.write_bytes(bytes(data))
    assert subprocess.run(args, capture_output=True).returncode == 2
