"""CLI surface: subcommand wiring, exit codes, end-to-end tiny pipeline."""

import contextlib
import io
import os
import xml.etree.ElementTree as ET

import pytest

from padrec.cli import main


def run(*argv):
    return main(list(argv))


# ---------------------------------------------------------------------------
# usage errors
# ---------------------------------------------------------------------------


def test_no_command_is_usage_error():
    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        assert run() == 1
    assert "usage error" in err.getvalue()


def test_unknown_command_is_usage_error():
    assert run("frobnicate") == 1


def test_missing_required_flag_is_usage_error():
    assert run("gen-data") == 1
    assert run("bench", "--data", "x") == 1


def test_bad_ablation_choice_is_usage_error():
    assert run("train-draft", "--data", "d", "--target", "t", "--out", "o",
               "--ablation", "bogus") == 1


def test_bad_seed_list_is_usage_error(pipeline):
    data, target, draft = pipeline
    assert run("bench", "--data", data, "--target", target, "--draft", draft,
               "--seeds", "1,x", "--out", "r.csv") == 1


# ---------------------------------------------------------------------------
# tiny end-to-end pipeline (module-scoped: gen -> train -> bench artifacts)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "data")
    target = str(root / "target.ckpt")
    draft = str(root / "draft.ckpt")
    assert run("gen-data", "--out", data, "--seed", "1", "--items", "12",
               "--users", "20", "--k", "2", "--codebook", "4",
               "--ctx-words", "4") == 0
    assert run("train-target", "--data", data, "--out", target,
               "--epochs", "1", "--lr", "1e-3", "--batch", "4", "--seed", "0") == 0
    assert run("train-draft", "--data", data, "--target", target, "--out", draft,
               "--depth-train", "2", "--topk-aux", "4", "--aux-weight", "1.0",
               "--ablation", "full", "--lr", "1e-3", "--seed", "0",
               "--epochs", "1") == 0
    return data, target, draft


def test_pipeline_artifacts_exist(pipeline):
    data, target, draft = pipeline
    for f in ("vocab.txt", "streams.tsv", "train.txt", "valid.txt", "test.txt"):
        assert os.path.exists(os.path.join(data, f))
    for ckpt in (target, draft):
        assert os.path.exists(ckpt)
        assert os.path.exists(ckpt + ".train.csv")
    with open(target + ".train.csv") as fh:
        assert fh.readline().strip() == "epoch,step,loss,val_ppl"
    with open(draft + ".train.csv") as fh:
        assert fh.readline().strip() == "epoch,step,loss,loss_depth_1,loss_depth_2,val_tau"


def test_gen_data_deterministic(tmp_path):
    outs = []
    for tag in ("a", "b"):
        d = str(tmp_path / tag)
        assert run("gen-data", "--out", d, "--seed", "9", "--items", "12",
                   "--users", "20", "--k", "2", "--codebook", "4",
                   "--ctx-words", "4") == 0
        outs.append(open(os.path.join(d, "streams.tsv"), "rb").read())
    assert outs[0] == outs[1]


def test_bench_writes_report(pipeline, tmp_path):
    data, target, draft = pipeline
    out = str(tmp_path / "report.csv")
    assert run("bench", "--data", data, "--target", target, "--draft", draft,
               "--depth", "2", "--width", "2", "--temperature", "0",
               "--seeds", "0", "--out", out, "--max-users", "1") == 0
    with open(out) as fh:
        header = fh.readline().strip()
        body = fh.read().strip().splitlines()
    assert header.startswith("config_id,seed,ablation,temperature,depth,width,tau")
    assert len(body) == 2  # one AR row + one SD row


def test_bench_no_timing_byte_identical(pipeline, tmp_path):
    data, target, draft = pipeline
    blobs = []
    for tag in ("a", "b"):
        out = str(tmp_path / f"{tag}.csv")
        assert run("bench", "--data", data, "--target", target, "--draft", draft,
                   "--depth", "2", "--width", "2", "--temperature", "0",
                   "--seeds", "0,1", "--out", out, "--max-users", "1",
                   "--no-timing") == 0
        blobs.append(open(out, "rb").read())
    assert blobs[0] == blobs[1]


def test_bench_depth_past_training_is_usage_error(pipeline, tmp_path):
    data, target, draft = pipeline
    assert run("bench", "--data", data, "--target", target, "--draft", draft,
               "--depth", "6", "--width", "2", "--out", str(tmp_path / "r.csv"),
               "--max-users", "1") == 1


def test_sweep_depth_writes_csv_and_svg(pipeline, tmp_path):
    data, target, draft = pipeline
    out = str(tmp_path / "sweep")
    assert run("sweep-depth", "--data", data, "--target", target, "--draft", draft,
               "--depths", "1,2", "--width", "2", "--out", out,
               "--max-users", "1", "--no-timing") == 0
    assert os.path.exists(os.path.join(out, "sweep.csv"))
    ET.fromstring(open(os.path.join(out, "sweep.svg"), encoding="utf-8").read())


def test_plot_renders_report(pipeline, tmp_path):
    data, target, draft = pipeline
    report = str(tmp_path / "report.csv")
    assert run("bench", "--data", data, "--target", target, "--draft", draft,
               "--depth", "2", "--width", "2", "--seeds", "0", "--out", report,
               "--max-users", "1", "--no-timing") == 0
    out = str(tmp_path / "plots")
    assert run("plot", "--report", report, "--out", out) == 0
    files = os.listdir(out)
    assert files
    for f in files:
        ET.fromstring(open(os.path.join(out, f), encoding="utf-8").read())


# ---------------------------------------------------------------------------
# exit-code mapping for runtime failures
# ---------------------------------------------------------------------------


def test_missing_data_dir_is_io_error(tmp_path):
    assert run("bench", "--data", str(tmp_path / "nope"), "--target", "t",
               "--draft", "d", "--out", "r.csv") == 3


def test_missing_report_is_io_error(tmp_path):
    assert run("plot", "--report", str(tmp_path / "nope.csv"),
               "--out", str(tmp_path)) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergent_training_is_invariant_error(pipeline, tmp_path):
    data, _, _ = pipeline
    assert run("train-target", "--data", data, "--out", str(tmp_path / "t.ckpt"),
               "--epochs", "1", "--lr", "1e12", "--seed", "0") == 2
