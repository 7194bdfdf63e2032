"""End-to-end command-line tests: exit codes, determinism, output shape."""

import contextlib
import io
import json
import os

import numpy as np
import pytest

from posekit.annotations import load_annotations
from posekit.cli import main

FAST_CONFIG = {"num_types": 2, "levels": 1, "orientation_count": 4,
               "epochs": 1, "cache_size": 50, "max_per_image": 4,
               "svm_c": 0.01}


def _run_quiet(argv) -> int:
    with contextlib.redirect_stdout(io.StringIO()):
        return main(argv)


def _run(argv, capsys):
    code = main(argv)
    cap = capsys.readouterr()
    out = cap.out
    payload = json.loads(out.strip().splitlines()[-1]) if out.strip() else None
    return code, payload, out, cap.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny synth -> cluster -> train chain shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(FAST_CONFIG))
    book = root / "book.bin"
    model = root / "model.bin"
    assert _run_quiet(["synth", "--out", str(data), "--families", "upright",
                       "--count", "3", "--negatives", "2", "--size", "64",
                       "--seed", "5"]) == 0
    ann = data / "annotations.jsonl"
    assert _run_quiet(["cluster", "--annotations", str(ann), "--tree", "upper",
                       "--mode", "normalized", "--out", str(book),
                       "--config", str(cfg), "--seed", "5"]) == 0
    assert _run_quiet(["train", "--annotations", str(ann), "--book", str(book),
                       "--negatives", str(data / "negatives"),
                       "--tree", "upper", "--out", str(model),
                       "--config", str(cfg), "--seed", "5"]) == 0
    return {"root": root, "data": data, "ann": ann, "cfg": cfg,
            "book": book, "model": model}


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x", "--frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_synth_is_byte_deterministic(tmp_path, capsys):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code, payload, raw, _ = _run(
            ["synth", "--out", str(out), "--families", "upright,rotated",
             "--count", "2", "--negatives", "1", "--size", "64",
             "--seed", "7"], capsys)
        assert code == 0
        assert payload["scenes"] == 4 and payload["negatives"] == 1
        assert payload["seed"] == 7
        # stdout is one canonical JSON line, keys sorted
        line = raw.strip()
        assert line == json.dumps(json.loads(line), sort_keys=True)
        outs.append(out)
    a, b = outs
    assert (a / "annotations.jsonl").read_bytes() == \
        (b / "annotations.jsonl").read_bytes()
    pngs = sorted(p.name for p in (a / "images").iterdir())
    assert pngs == sorted(p.name for p in (b / "images").iterdir())
    for name in pngs:
        assert (a / "images" / name).read_bytes() == \
            (b / "images" / name).read_bytes()
    assert (a / "negatives" / "neg_0000.png").read_bytes() == \
        (b / "negatives" / "neg_0000.png").read_bytes()


def test_seed_sources(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("POSEKIT_SEED", "41")
    code, payload, _, _ = _run(["synth", "--out", str(tmp_path / "e"),
                             "--count", "1", "--size", "64"], capsys)
    assert code == 0 and payload["seed"] == 41
    code, payload, _, _ = _run(["synth", "--out", str(tmp_path / "c"),
                             "--count", "1", "--size", "64",
                             "--seed", "8"], capsys)
    assert code == 0 and payload["seed"] == 8


def test_synth_unknown_family_exit_4(tmp_path, capsys):
    code, _, _, err = _run(["synth", "--out", str(tmp_path / "x"),
                       "--families", "jumping"], capsys)
    assert code == 4
    assert "jumping" in err


def test_cluster_output_and_montage(pipeline, tmp_path, capsys):
    svg = tmp_path / "types.svg"
    out = tmp_path / "book2.bin"
    code, payload, _, _ = _run(
        ["cluster", "--annotations", str(pipeline["ann"]), "--tree", "upper",
         "--mode", "normalized", "--out", str(out), "--montage", str(svg),
         "--config", str(pipeline["cfg"]), "--seed", "5"], capsys)
    assert code == 0
    assert payload["k"] == FAST_CONFIG["num_types"]
    assert payload["instances"] == 3
    assert sum(payload["cluster_sizes"]["0"]) <= 3
    assert svg.read_text().startswith("<svg")
    # same seed, same book bytes as the shared fixture's
    assert out.read_bytes() == pipeline["book"].read_bytes()


def test_cluster_malformed_annotations_exit_4(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image": "x.png"}\n')
    code, _, _, err = _run(["cluster", "--annotations", str(bad),
                       "--out", str(tmp_path / "b.bin")], capsys)
    assert code == 4


def test_train_empty_negatives_exit_4(pipeline, tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    code, _, _, err = _run(
        ["train", "--annotations", str(pipeline["ann"]),
         "--book", str(pipeline["book"]), "--negatives", str(empty),
         "--out", str(tmp_path / "m.bin"),
         "--config", str(pipeline["cfg"])], capsys)
    assert code == 4


def test_train_book_model_confusion_exit_4(pipeline, tmp_path, capsys):
    code, _, _, err = _run(
        ["train", "--annotations", str(pipeline["ann"]),
         "--book", str(pipeline["model"]),
         "--negatives", str(pipeline["data"] / "negatives"),
         "--out", str(tmp_path / "m.bin"),
         "--config", str(pipeline["cfg"])], capsys)
    assert code == 4
    assert "phraselet book" in err
    code, _, _, err = _run(
        ["infer", "--model", str(pipeline["book"]),
         "--image", str(pipeline["data"] / "images" / "upright_0000.png"),
         "--config", str(pipeline["cfg"])], capsys)
    assert code == 4


def test_infer_output(pipeline, tmp_path, capsys):
    image = pipeline["data"] / "images" / "upright_0001.png"
    out = tmp_path / "pose.json"
    svg = tmp_path / "pose.svg"
    code, payload, raw, _ = _run(
        ["infer", "--model", str(pipeline["model"]), "--image", str(image),
         "--out", str(out), "--svg", str(svg),
         "--config", str(pipeline["cfg"])], capsys)
    assert code == 0
    assert np.isfinite(payload["score"])
    kp = np.asarray(payload["keypoints"], dtype=np.float64)
    assert kp.shape == (14, 2) and np.isfinite(kp).all()
    assert len(payload["parts"]) >= 14
    assert out.read_text().strip() == raw.strip().splitlines()[-1]
    assert svg.read_text().startswith("<svg")
    # rerun: identical bytes out
    code2, _, raw2, _ = _run(
        ["infer", "--model", str(pipeline["model"]), "--image", str(image),
         "--config", str(pipeline["cfg"])], capsys)
    assert code2 == 0
    assert raw2.strip().splitlines()[-1] == raw.strip().splitlines()[-1]


def test_missing_files_exit_3(pipeline, tmp_path, capsys):
    code, _, _, err = _run(["infer", "--model", str(tmp_path / "no.bin"),
                       "--image", str(tmp_path / "no.png")], capsys)
    assert code == 3
    code, _, _, err = _run(["train", "--annotations", str(pipeline["ann"]),
                       "--book", str(pipeline["book"]),
                       "--negatives", str(tmp_path / "nowhere"),
                       "--out", str(tmp_path / "m.bin"),
                       "--config", str(pipeline["cfg"])], capsys)
    assert code == 3


def test_corrupt_model_exit_4(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"POSEKIT\x00garbage")
    image = pipeline["data"] / "images" / "upright_0000.png"
    code, _, _, err = _run(["infer", "--model", str(bad), "--image", str(image)],
                      capsys)
    assert code == 4


def test_eval_command(pipeline, tmp_path, capsys):
    records = list(load_annotations(str(pipeline["ann"])))
    perfect = tmp_path / "perfect.jsonl"
    with open(perfect, "w") as fh:
        for r in records:
            fh.write(json.dumps({"image_id": r.image_id, "person": r.person,
                                 "keypoints": r.keypoints.tolist()}) + "\n")
    shifted = tmp_path / "shifted.jsonl"
    with open(shifted, "w") as fh:
        for r in records:
            kp = r.keypoints + 1000.0
            fh.write(json.dumps({"image_id": r.image_id, "person": r.person,
                                 "keypoints": kp.tolist()}) + "\n")
    report = tmp_path / "report.csv"
    curves = tmp_path / "curves.csv"
    plot = tmp_path / "curves.svg"
    code, payload, _, _ = _run(
        ["eval", "--annotations", str(pipeline["ann"]),
         "--pred", f"exact={perfect}", "--pred", f"far={shifted}",
         "--out", str(report), "--curves", str(curves), "--plot", str(plot)],
        capsys)
    assert code == 0
    assert payload["pooled_avg"]["exact"] == 100.0
    assert payload["pooled_avg"]["far"] == 0.0
    lines = report.read_text().splitlines()
    assert lines[0] == "method,category,joint,pdj_avg"
    assert curves.read_text().splitlines()[0] == "threshold,exact,far"
    assert len(curves.read_text().splitlines()) == 102
    assert plot.read_text().startswith("<svg")
    # missing prediction and malformed --pred
    partial = tmp_path / "partial.jsonl"
    partial.write_text(perfect.read_text().splitlines()[0] + "\n")
    code, _, _, err = _run(["eval", "--annotations", str(pipeline["ann"]),
                       "--pred", f"p={partial}", "--out", str(report)], capsys)
    assert code == 4
    code, _, _, err = _run(["eval", "--annotations", str(pipeline["ann"]),
                       "--pred", "nofile", "--out", str(report)], capsys)
    assert code == 4


def test_config_unknown_key_exit_4(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"cell": 4}))
    code, _, _, err = _run(["synth", "--out", str(tmp_path / "o"),
                       "--config", str(cfg)], capsys)
    assert code == 4
    assert "cell" in err
