import csv
import hashlib
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from sgpps import cli, trainer
from sgpps.kernels import NumericalError

CONFIG = """\
[trainer]
task = "hand-posture"
max_iterations = 3
episodes_per_iter = 40
elite_keep = 20
seed = 0
early_stop = false

[policy]
variant = "{variant}"
n_components = {M}
n_pseudo_inputs = 10
mstep_max_iter = 3
n_init = 2
"""


def write_config(tmp_path, variant="multimodal", M=2, name="cfg.toml", text=None):
    path = tmp_path / name
    path.write_text(text if text is not None else CONFIG.format(variant=variant, M=M))
    return path


def train(tmp_path, capsys, variant="multimodal", M=2, out="run"):
    cfg = write_config(tmp_path, variant, M, name=f"{variant}{M}.toml")
    assert cli.main(["train", str(cfg), "--out", str(tmp_path / out)]) == 0
    capsys.readouterr()
    return tmp_path / out


def strict_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    assert all(len(r) == len(header) for r in body)
    return header, np.array(body, dtype=float)


@pytest.fixture
def multimodal_run(tmp_path, capsys):
    return train(tmp_path, capsys)


# --- train -------------------------------------------------------------------


def test_train_writes_outputs(multimodal_run, tmp_path):
    with open(multimodal_run / "curve.csv") as fh:
        header, body = strict_csv(fh.read())
    assert header == ["iteration", "mean_return", "std_return", "elbo"]
    np.testing.assert_array_equal(body[:, 0], [1, 2, 3])
    manifest = json.loads((multimodal_run / "manifest.json").read_text())
    cfg_bytes = (tmp_path / "multimodal2.toml").read_bytes()
    assert manifest["config_sha256"] == hashlib.sha256(cfg_bytes).hexdigest()
    assert manifest["seed"] == 0 and manifest["iterations"] == 3 and manifest["finished"]
    assert sorted(p.name for p in (multimodal_run / "snapshots").iterdir()) == [f"iter_{i:03d}.json" for i in range(4)]
    assert (multimodal_run / "timing.csv").exists() and (multimodal_run / "final_snapshot.json").exists()


def test_train_repeat_is_byte_identical(multimodal_run, tmp_path, capsys):
    again = train(tmp_path, capsys, out="again")
    assert (again / "curve.csv").read_bytes() == (multimodal_run / "curve.csv").read_bytes()
    assert (again / "final_snapshot.json").read_bytes() == (multimodal_run / "final_snapshot.json").read_bytes()


def test_seed_flag_overrides_config(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["train", str(cfg), "--seed", "7", "--out", str(tmp_path / "s7")]) == 0
    assert json.loads((tmp_path / "s7" / "manifest.json").read_text())["seed"] == 7


@pytest.mark.parametrize(
    "text, needle",
    [
        (CONFIG.format(variant="multimodal", M=2).replace("n_pseudo_inputs = 10", "n_pseudo_inputs = 0"), "n_pseudo_inputs"),
        ("[trainer]\nseed = \n", "line 2"),
        ("[trainer]\nbogus = 1\n", "bogus"),
    ],
)
def test_bad_config_exits_2(tmp_path, capsys, text, needle):
    cfg = write_config(tmp_path, text=text)
    assert cli.main(["train", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert needle in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    assert cli.main(["train", str(tmp_path / "nope.toml")]) == 2


def test_numerical_abort_exits_3(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise NumericalError("factorization failed", jitter=1e-2)

    monkeypatch.setattr(trainer, "collect", broken)
    cfg = write_config(tmp_path)
    assert cli.main(["train", str(cfg), "--out", str(tmp_path / "x")]) == 3
    assert "iteration 1" in capsys.readouterr().err


# --- eval --------------------------------------------------------------------


def test_eval_prints_json(multimodal_run, capsys):
    assert cli.main(["eval", str(multimodal_run / "final_snapshot.json"), "hand-posture", "--n", "200"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n"] == 200 and 0 <= out["success_rate"] <= 1


def test_eval_corrupt_and_missing_snapshot(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["eval", str(bad), "hand-posture"]) == 2
    assert cli.main(["eval", str(tmp_path / "none.json"), "hand-posture"]) == 2
    bad.write_text('{"format": "sgpps-snapshot/1"}')
    assert cli.main(["eval", str(bad), "hand-posture"]) == 2


def test_eval_dimension_mismatch(multimodal_run, capsys):
    assert cli.main(["eval", str(multimodal_run / "final_snapshot.json"), "table-sweep"]) == 2
    assert "dimension mismatch" in capsys.readouterr().err


# --- plotdata ------------------------------------------------------------------


def test_policy_slice_shape(multimodal_run, capsys):
    assert cli.main(["plotdata", str(multimodal_run / "final_snapshot.json"), "--kind", "policy_slice"]) == 0
    header, body = strict_csv(capsys.readouterr().out)
    assert body.shape == (200, 1 + 2 * 2)
    assert header == ["state", "mean_1", "std_1", "mean_2", "std_2"]
    assert np.all(np.isfinite(body)) and np.all(body[:, 2::2] > 0)


def test_reliabilities_positive(tmp_path, capsys):
    run = train(tmp_path, capsys, variant="modeseeking", M=1)
    assert cli.main(["plotdata", str(run / "final_snapshot.json"), "--kind", "reliabilities"]) == 0
    header, body = strict_csv(capsys.readouterr().out)
    snap = json.loads((run / "final_snapshot.json").read_text())
    assert header == ["n", "dim", "reliability"]
    assert len(body) == len(snap["policy"]["support"])
    assert np.all(body[:, 2] > 0)


def test_unimodal_responsibilities_are_one(tmp_path, capsys):
    run = train(tmp_path, capsys, variant="unimodal", M=1)
    assert cli.main(["plotdata", str(run / "final_snapshot.json"), "--kind", "responsibilities"]) == 0
    _, body = strict_csv(capsys.readouterr().out)
    np.testing.assert_array_equal(body[:, 2], 1.0)


def test_unsupported_kind_for_snapshot_exits_2(multimodal_run, capsys):
    assert cli.main(["plotdata", str(multimodal_run / "final_snapshot.json"), "--kind", "reliabilities"]) == 2
    assert cli.main(["plotdata", str(multimodal_run / "snapshots" / "iter_000.json"), "--kind", "policy_slice"]) == 2


def test_curve_and_pseudo_inputs(multimodal_run, capsys):
    assert cli.main(["plotdata", str(multimodal_run / "curve.csv"), "--kind", "curve"]) == 0
    assert capsys.readouterr().out == (multimodal_run / "curve.csv").read_text()
    assert cli.main(["plotdata", str(multimodal_run / "final_snapshot.json"), "--kind", "pseudo_inputs"]) == 0
    _, body = strict_csv(capsys.readouterr().out)
    assert body.shape == (10, 1)
    assert cli.main(["plotdata", str(multimodal_run / "manifest.json"), "--kind", "curve"]) == 2


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "sgpps.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "sgpps" in out.stdout
