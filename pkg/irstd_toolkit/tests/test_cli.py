import json

import numpy as np
import pytest

from irstd_toolkit.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from irstd_toolkit.image_io import list_stems, write_mask


@pytest.fixture(scope="module")
def synth_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out-dir", str(root), "--count", "10", "--seed", "4"]) == EXIT_OK
    return root


def test_synth_is_byte_identical(tmp_path, synth_corpus):
    assert main(["synth", "--out-dir", str(tmp_path), "--count", "10", "--seed", "4"]) == EXIT_OK
    files = sorted(p.relative_to(synth_corpus) for p in synth_corpus.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    for name in files:
        assert (synth_corpus / name).read_bytes() == (tmp_path / name).read_bytes()


def test_detect_writes_outputs(tmp_path, synth_corpus):
    image = synth_corpus / "images" / "synth_0000.png"
    out = tmp_path / "out"
    assert main(["detect", "--method", "mpcm", "--input", str(image), "--out-dir", str(out)]) == EXIT_OK
    for name in ("synth_0000_saliency.png", "synth_0000_saliency.json", "synth_0000_mask.png"):
        assert (out / name).is_file()
    report = json.loads((out / "synth_0000_detection.json").read_text())
    assert report["method"] == "mpcm"
    assert report["total_ms"] > 0
    assert set(report["timing_ms"]) == {"contrast", "threshold"}


def test_detect_with_config_file(tmp_path, synth_corpus):
    config = tmp_path / "tophat.json"
    config.write_text('{"se_size": 7, "k": 4}')
    image = synth_corpus / "images" / "synth_0001.png"
    out = tmp_path / "out"
    args = ["detect", "--method", "tophat", "--input", str(image), "--config", str(config), "--out-dir", str(out)]
    assert main(args) == EXIT_OK
    assert (out / "synth_0001_mask.png").is_file()


def test_detect_missing_input_leaves_no_output(tmp_path):
    out = tmp_path / "out"
    args = ["detect", "--method", "mpcm", "--input", str(tmp_path / "absent.png"), "--out-dir", str(out)]
    assert main(args) == EXIT_USAGE
    assert not out.exists()


def test_unknown_method_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(["detect", "--method", "lcm", "--input", "x.png", "--out-dir", str(tmp_path)])
    assert excinfo.value.code == 2


def test_eval_perfect_and_empty_predictions(tmp_path, synth_corpus):
    masks = synth_corpus / "masks"
    out = tmp_path / "perfect.json"
    assert main(["eval", "--pred-dir", str(masks), "--gt-dir", str(masks), "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["iou"] == report["niou"] == 1.0

    empty = tmp_path / "empty"
    empty.mkdir()
    for stem in list_stems(masks):
        write_mask(empty / f"{stem}.png", np.zeros((256, 256), dtype=bool))
    out = tmp_path / "empty.json"
    assert main(["eval", "--pred-dir", str(empty), "--gt-dir", str(masks), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["iou"] == 0.0


def test_eval_stem_mismatch(tmp_path, synth_corpus):
    partial = tmp_path / "partial"
    partial.mkdir()
    write_mask(partial / "synth_0000.png", np.zeros((256, 256), dtype=bool))
    args = ["eval", "--pred-dir", str(partial), "--gt-dir", str(synth_corpus / "masks")]
    assert main(args) == EXIT_USAGE


def test_roc_writes_csv(tmp_path, synth_corpus):
    out = tmp_path / "roc.csv"
    args = ["roc", "--method", "tophat", "--corpus", str(synth_corpus), "--thresholds", "10", "--out", str(out)]
    assert main(args) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "threshold,fa,pd"
    assert len(lines) == 11


def test_roc_on_test_split(tmp_path, synth_corpus):
    out = tmp_path / "roc.csv"
    args = [
        "roc", "--method", "mpcm", "--corpus", str(synth_corpus), "--split", "test",
        "--thresholds", "0.5,0.1,0.01", "--out", str(out),
    ]
    assert main(args) == EXIT_OK
    assert len(out.read_text().splitlines()) == 4


def test_stats(tmp_path, synth_corpus):
    out = tmp_path / "stats.json"
    assert main(["stats", "--corpus", str(synth_corpus), "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["images"] == 10
    assert report["targets"] == sum(int(k) * v for k, v in report["count_histogram"].items())


def test_stats_on_missing_corpus(tmp_path):
    assert main(["stats", "--corpus", str(tmp_path / "nowhere")]) == EXIT_USAGE


def test_corrupt_corpus_exits_with_failure(tmp_path):
    root = tmp_path / "corpus"
    assert main(["synth", "--out-dir", str(root), "--count", "10", "--seed", "2"]) == EXIT_OK
    (root / "images" / "synth_0004.png").write_bytes(b"broken")
    assert main(["stats", "--corpus", str(root)]) == EXIT_FAILURE


def test_gradcheck_single_variant(tmp_path):
    out = tmp_path / "grad.json"
    assert main(["gradcheck", "--variant", "acm", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["passed"]
    assert set(report["max_errors"]) == {"acm", "soft-iou"}


def test_bench_needs_five_runs():
    assert main(["bench", "--suite", "mpcm", "--runs", "3"]) == EXIT_USAGE


def test_bench_mpcm(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--suite", "mpcm", "--runs", "5", "--size", "48", "--out", str(out)]) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["passed"] and report["speedup"] >= 1.1
