import subprocess
import sys

import numpy as np
import pytest

from ofanet import synthdata
from ofanet.cli import main


TINY_CONFIG = """\
[train]
seed = 3
input_size = 16
patch_size = 4
embed_dim = 16
depth = 1
heads = 4
decoder_embed_dim = 8
decoder_depth = 1
samples_per_modality = 32
batch_size = 16
epochs = 1
modalities = sentinel1, naip

[probe]
epochs = 30
"""


@pytest.fixture()
def tiny_config_path(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


def test_gen_data_deterministic_rerun(tmp_path, capsys):
    out1 = tmp_path / "a.ofad"
    out2 = tmp_path / "b.ofad"
    base = ["gen-data", "--modality", "sentinel1", "--kind", "cls",
            "--count", "12", "--seed", "5", "--classes", "2", "--size", "16"]
    assert main(base + ["--out", str(out1)]) == 0
    assert main(base + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert "12 cls samples" in capsys.readouterr().out


def test_gen_data_unknown_modality_exit_code(tmp_path, capsys):
    rc = main(["gen-data", "--modality", "wat", "--kind", "cls", "--count", "4",
               "--seed", "1", "--out", str(tmp_path / "x.ofad")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert len(err.strip().splitlines()) == 1
    assert not (tmp_path / "x.ofad").exists()


def test_failed_write_leaves_no_partial_file(tmp_path):
    ds = synthdata.LoadedDataset(
        modality_id="sentinel1",
        images=np.zeros((1, 4, 4, 2), dtype=np.float32),
        labels=np.array([70_000]),  # does not fit the u16 label field
    )
    with pytest.raises(Exception):
        synthdata.save_dataset(tmp_path / "broken.ofad", ds)
    assert list(tmp_path.iterdir()) == []


def test_pretrain_probe_inspect_report_pipeline(tmp_path, tiny_config_path, capsys):
    run_dir = tmp_path / "run"
    assert main(["pretrain", "--config", str(tiny_config_path), "--out-dir", str(run_dir)]) == 0
    capsys.readouterr()
    final = run_dir / "checkpoint-final.ofac"
    assert final.exists()
    assert (run_dir / "loss.log").exists()

    data = tmp_path / "naip_cls.ofad"
    assert main(["gen-data", "--modality", "naip", "--kind", "cls", "--count", "40",
                 "--seed", "9", "--classes", "2", "--size", "16", "--out", str(data),
                 "--config", str(tiny_config_path)]) == 0
    capsys.readouterr()

    lines_file = tmp_path / "reports.txt"
    assert main(["probe", "--task", "cls", "--checkpoint", "random-init",
                 "--data", str(data), "--config", str(tiny_config_path),
                 "--out", str(lines_file)]) == 0
    out = capsys.readouterr().out.strip()
    task, dataset, method, metric, value = out.split("\t")
    assert (task, dataset, method, metric) == ("classification", "naip", "random-init", "top1")
    assert 0.0 <= float(value) <= 1.0

    assert main(["probe", "--task", "cls", "--checkpoint", str(final),
                 "--data", str(data), "--config", str(tiny_config_path),
                 "--method", "ofa", "--out", str(lines_file)]) == 0
    capsys.readouterr()

    assert main(["inspect", "--checkpoint", str(final)]) == 0
    inspect_out = capsys.readouterr().out
    assert "backbone.block0.attn.wq" in inspect_out
    assert "embedder.sentinel1.weight" in inspect_out
    assert "seed = 3" in inspect_out

    assert main(["report", "--inputs", str(lines_file)]) == 0
    table = capsys.readouterr().out
    assert "random-init" in table and "ofa" in table and "delta" in table


def test_probe_task_data_mismatch(tmp_path, tiny_config_path, capsys):
    data = tmp_path / "seg.ofad"
    main(["gen-data", "--modality", "naip", "--kind", "seg", "--count", "8",
          "--seed", "1", "--classes", "2", "--size", "16", "--out", str(data)])
    capsys.readouterr()
    rc = main(["probe", "--task", "cls", "--checkpoint", "random-init",
               "--data", str(data), "--config", str(tiny_config_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bad_config_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[train]\nmask_ratio = 1.5\n")
    rc = main(["pretrain", "--config", str(cfg), "--out-dir", str(tmp_path / "out")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "mask_ratio" in err and "line 2" in err


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "ofanet.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout
