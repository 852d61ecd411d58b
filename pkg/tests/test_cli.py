import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from neglectnet import checkpoint, gradcheck
from neglectnet import tensor as T
from neglectnet.cli import main
from neglectnet.training import TrainReport

TINY = ["--depth", "2", "--base_width", "4", "--image_size", "16", "--d_depth", "2"]


def dir_hash(path):
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(path).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data = root / "data"
    assert main(["synth", "--n", "4", "--n_test", "2", "--data_dir", str(data), *TINY]) == 0
    out = root / "out"
    assert main(["train", "--data_dir", str(data), "--steps", "3", "--batch_size", "2", "--checkpoint_every",
                 "2", "--out_dir", str(out), *TINY]) == 0
    return root, data, out


def test_synth_deterministic_and_creates_dir(tmp_path, capsys):
    import shutil
    d = tmp_path / "x" / "data"
    hashes = []
    for _ in range(2):
        assert main(["synth", "--n", "8", "--seed", "1", "--n_test", "0", "--data_dir", str(d)]) == 0
        hashes.append(dir_hash(d))
        assert len(list((d / "train").glob("*_x.png"))) == 8
        shutil.rmtree(d)
    assert hashes[0] == hashes[1]
    assert "train,8" in capsys.readouterr().out


def test_synth_zero_is_argument_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--n", "0", "--data_dir", str(tmp_path)])
    assert exc.value.code != 0


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--not_a_key", "1"])
    assert exc.value.code != 0


def test_unknown_config_file_key_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"depth": 2, "mystery": 1}))
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", str(cfg), "--out_dir", str(tmp_path / "o")])
    assert exc.value.code != 0


def test_bad_value_rejected():
    with pytest.raises(SystemExit):
        main(["train", "--steps", "many"])


def test_train_outputs(trained):
    _, _, out = trained
    names = sorted(p.name for p in out.iterdir())
    assert {"checkpoint_000000.ngnt", "checkpoint_000002.ngnt", "checkpoint_000003.ngnt", "config.json",
            "train_log.csv", "loss_curves.png"} <= set(names)
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["steps"] == 3 and echoed["depth"] == 2
    assert len(TrainReport.read_csv(out / "train_log.csv").records) == 3


def test_train_zero_steps_initial_only(tmp_path):
    assert main(["train", "--steps", "0", "--n_train", "2", "--batch_size", "2", "--out_dir", str(tmp_path),
                 "--figures", "false", *TINY]) == 0
    assert [p.name for p in tmp_path.glob("*.ngnt")] == ["checkpoint_000000.ngnt"]


def test_train_modes_have_different_inventories(tmp_path):
    for mode in ("full", "baseline"):
        assert main(["train", "--steps", "0", "--n_train", "2", "--batch_size", "2", "--mode", mode,
                     "--out_dir", str(tmp_path / mode), *TINY]) == 0
    full = set(checkpoint.load(tmp_path / "full" / "checkpoint_000000.ngnt"))
    base = set(checkpoint.load(tmp_path / "baseline" / "checkpoint_000000.ngnt"))
    assert full != base and base < full


def test_train_resume(tmp_path):
    args = ["--n_train", "2", "--batch_size", "2", "--checkpoint_every", "1", "--out_dir", str(tmp_path), *TINY]
    assert main(["train", "--steps", "2", *args]) == 0
    (tmp_path / "checkpoint_000002.ngnt").unlink()  # pretend the run died after step 1
    assert main(["train", "--steps", "3", "--resume", *args]) == 0
    assert (tmp_path / "checkpoint_000003.ngnt").is_file()
    assert TrainReport.read_csv(tmp_path / "train_log.csv").column("step").tolist() == [0, 1, 2]


def test_eval_deterministic(trained, capsys):
    _, _, out = trained
    ck = str(out / "checkpoint_000003.ngnt")
    assert main(["eval", "--checkpoint", ck]) == 0
    first = (out / "eval_test.csv").read_bytes()
    assert main(["eval", "--checkpoint", ck]) == 0
    assert (out / "eval_test.csv").read_bytes() == first
    assert first.decode().splitlines()[0] == "metric,value,n"
    assert (out / "eval_test.png").is_file()
    assert "l1_pct" in capsys.readouterr().out


def test_eval_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ngnt")]) != 0


def test_eval_mismatched_config(trained):
    _, _, out = trained
    assert main(["eval", "--checkpoint", str(out / "checkpoint_000003.ngnt"), "--depth", "3"]) != 0


def test_infer_outputs(trained, tmp_path):
    _, data, out = trained
    ck = str(out / "checkpoint_000003.ngnt")
    img = str(data / "test" / "00000_x.png")
    for sub in ("a", "b"):
        assert main(["infer", "--checkpoint", ck, "--input", img, "--output", str(tmp_path / sub)]) == 0
    masks = sorted(p.name for p in (tmp_path / "a").glob("neglect_mask_*.png"))
    assert masks == ["neglect_mask_1.png", "neglect_mask_2.png"]
    with Image.open(tmp_path / "a" / "panel.png") as im:
        assert im.size == (4 * 16, 16)
    assert dir_hash(tmp_path / "a") == dir_hash(tmp_path / "b")


def test_infer_center_crops(trained, tmp_path, caplog):
    _, _, out = trained
    src = tmp_path / "odd.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 256, (21, 19, 3), dtype=np.uint8)).save(src)
    assert main(["infer", "--checkpoint", str(out / "checkpoint_000003.ngnt"), "--input", str(src),
                 "--output", str(tmp_path / "o")]) == 0
    with Image.open(tmp_path / "o" / "x.png") as im:
        assert im.size == (16, 20)  # (w, h) after cropping 19x21 to multiples of 4
    assert "center-cropping" in caplog.text


def test_infer_unreadable_image(trained, tmp_path):
    _, _, out = trained
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not a png")
    assert main(["infer", "--checkpoint", str(out / "checkpoint_000003.ngnt"), "--input", str(bad)]) != 0


def test_thread_env_validated(monkeypatch):
    monkeypatch.setenv("NEGLECTNET_THREADS", "zero")
    with pytest.raises(SystemExit):
        main(["gradcheck"])


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "check,max_rel_err,tol,status"
    assert "FAIL" not in out


def _bad_square(x):
    out = x.data ** 2

    def backward(g):
        x._accumulate(g * x.data)  # missing factor 2

    return T._result(out, (x,), backward)


def test_gradcheck_reports_injected_failure(monkeypatch, capsys):
    monkeypatch.setitem(gradcheck.OP_CASES, "bad_square",
                        gradcheck._op(lambda x: gradcheck.project(_bad_square(x)), (2, 3)))
    monkeypatch.setattr(gradcheck, "E2E_CASES", {})
    assert main(["gradcheck"]) == 1
    out = capsys.readouterr().out
    assert "bad_square" in out and "FAIL" in out
