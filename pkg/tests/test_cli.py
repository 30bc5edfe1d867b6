import json
import pytest

from fanet import cli, demo, synth
from fanet.imageops import save_png

SIZE = 48


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    for sub, imgs in (("genuine", demo.genuine_images(12, 1, SIZE)), ("backgrounds", demo.background_images(3, 1, SIZE))):
        (root / sub).mkdir()
        for name, img in imgs.items():
            save_png(root / sub / f"{name}.png", img)
    return root


def run(*argv):
    return cli.main([str(a) for a in argv])


def synth_args(images, out, *extra):
    return ("synth", "--genuine", images / "genuine", "--backgrounds", images / "backgrounds", "--out", out, *extra)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Every stage once, on the bundled demo images."""
    w = tmp_path_factory.mktemp("run")
    steps = [
        synth_args(demo.bundled_demo_dir(), w / "corpus", "--n", 40, "--seed", 3, "--degrade-fraction", 0.3),
        ("fit-cnn", "--corpus", w / "corpus", "--out", w / "cnn.ckpt"),
        ("fit-quality", "--corpus", w / "corpus", "--out", w / "q.ckpt"),
        ("extract", "--corpus", w / "corpus", "--cnn", w / "cnn.ckpt", "--out", w / "feat.tsv"),
        ("supervise", "--corpus", w / "corpus", "--features", w / "feat.tsv", "--quality-head", w / "q.ckpt",
         "--cnn", w / "cnn.ckpt", "--out", w / "scores.tsv"),
        ("train", "--features", w / "feat.tsv", "--scores", w / "scores.tsv", "--hidden", 16, "--out", w / "fanet.ckpt"),
        ("score", "--features", w / "feat.tsv", "--model", w / "fanet.ckpt", "--out", w / "fa.tsv"),
        ("gate", "--fa-scores", w / "fa.tsv", "--tf", 0.25, "--out", w / "gate.tsv"),
        ("eval", "--corpus", w / "corpus", "--features", w / "feat.tsv", "--fa-scores", w / "fa.tsv",
         "--cnn", w / "cnn.ckpt", "--model", w / "fanet.ckpt", "--tf", "0,0.1,0.2,0.3", "--out", w / "reports"),
    ]
    codes = [run(*s) for s in steps]
    return w, codes


def test_pipeline_stages_succeed(pipeline):
    _, codes = pipeline
    assert codes == [0] * 9


def test_each_stage_writes_metadata(pipeline):
    w, _ = pipeline
    for art in ("corpus", "cnn.ckpt", "q.ckpt", "feat.tsv", "scores.tsv", "fanet.ckpt", "fa.tsv", "gate.tsv", "reports"):
        meta = json.loads((w / f"{art}.meta.json").read_text())
        assert {"seed", "config", "config_sha256", "versions", "inputs"} <= set(meta)
        assert str(w) not in json.dumps(meta)


def test_score_rows_match_corpus(pipeline):
    w, _ = pipeline
    n = len(synth.read_manifest(w / "corpus" / "manifest.tsv"))
    rows = (w / "fa.tsv").read_text().splitlines()[2:]
    assert len(rows) == n == 80


def test_eval_writes_one_report_per_threshold(pipeline):
    w, _ = pipeline
    names = sorted(p.name for p in (w / "reports").glob("report_tf*.tsv"))
    assert names == ["report_tf0.00.tsv", "report_tf0.10.tsv", "report_tf0.20.tsv", "report_tf0.30.tsv"]
    assert (w / "reports" / "plot_data.tsv").is_file()


def test_gate_rejects_requested_fraction(pipeline):
    w, _ = pipeline
    rows = [r.split("\t") for r in (w / "gate.tsv").read_text().splitlines()[2:]]
    assert sum(r[2] == "0" for r in rows) == 20
    fa = dict(r.split("\t")[:2] for r in (w / "fa.tsv").read_text().splitlines()[2:])
    assert all(r[1] == fa[r[0]] for r in rows)


def test_synth_spoof_count(images, tmp_path):
    assert run(*synth_args(images, tmp_path / "c", "--n", 100, "--seed", 7)) == 0
    records = synth.read_manifest(tmp_path / "c" / "manifest.tsv")
    assert sum(r.label == synth.SPOOF for r in records) == 100


def test_synth_same_seed_same_manifest(images, tmp_path):
    run(*synth_args(images, tmp_path / "a", "--n", 10, "--seed", 7))
    run(*synth_args(images, tmp_path / "b", "--n", 10, "--seed", 7))
    assert (tmp_path / "a" / "manifest.tsv").read_bytes() == (tmp_path / "b" / "manifest.tsv").read_bytes()


def test_synth_missing_directory_leaves_nothing(images, tmp_path, capsys):
    out = tmp_path / "c"
    code = run("synth", "--genuine", tmp_path / "nope", "--backgrounds", images / "backgrounds", "--out", out)
    assert code == 2
    assert "nope" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["synth", "--bogus"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        cli.main(["train"])
    assert err.value.code == 1


def test_missing_upstream_names_file(tmp_path, capsys):
    code = run("score", "--features", tmp_path / "feat.tsv", "--model", tmp_path / "m.ckpt", "--out", tmp_path / "o")
    assert code == 2
    assert "feat.tsv" in capsys.readouterr().err


def test_malformed_input_exits_two(tmp_path, capsys):
    (tmp_path / "feat.tsv").write_text("not a feature file\n")
    (tmp_path / "m.ckpt").write_bytes(b"junk")
    assert run("score", "--features", tmp_path / "feat.tsv", "--model", tmp_path / "m.ckpt", "--out", tmp_path / "o") == 2


def test_stale_upstream_detected(pipeline, images, tmp_path, capsys):
    w, _ = pipeline
    import shutil

    for name in ("corpus", "corpus.meta.json", "cnn.ckpt", "cnn.ckpt.meta.json", "q.ckpt", "feat.tsv", "feat.tsv.meta.json"):
        src = w / name
        (shutil.copytree if src.is_dir() else shutil.copy)(src, tmp_path / name)
    assert run(*synth_args(images, tmp_path / "corpus", "--n", 12, "--seed", 4)) == 0
    code = run("supervise", "--corpus", tmp_path / "corpus", "--features", tmp_path / "feat.tsv",
               "--quality-head", tmp_path / "q.ckpt", "--cnn", tmp_path / "cnn.ckpt", "--out", tmp_path / "s.tsv")
    assert code == 2
    assert "stale" in capsys.readouterr().err


def test_class_collapse_exits_three(pipeline, tmp_path, capsys):
    w, _ = pipeline
    from fanet import featio

    ids = featio.read_features(w / "feat.tsv").ids
    lines = ["#fanet-scores v1", "id\ty_q\ty_f\tlabel"] + [f"{i}\t1.0\t1.0\t" for i in ids]
    (tmp_path / "s.tsv").write_text("\n".join(lines) + "\n")
    code = run("train", "--features", w / "feat.tsv", "--scores", tmp_path / "s.tsv", "--epochs", 1,
               "--out", tmp_path / "m.ckpt")
    assert code == 3
    assert "class collapse" in capsys.readouterr().err
    assert not (tmp_path / "m.ckpt").exists()


def test_config_precedence(images, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 9, "synth": {"n": 5}}))

    def spoofs(out):
        return sum(r.label == synth.SPOOF for r in synth.read_manifest(out / "manifest.tsv"))

    assert run("--config", cfg, *synth_args(images, tmp_path / "a")) == 0
    assert spoofs(tmp_path / "a") == 5
    assert json.loads((tmp_path / "a.meta.json").read_text())["seed"] == 9
    assert run("--config", cfg, *synth_args(images, tmp_path / "b", "--n", 7)) == 0
    assert spoofs(tmp_path / "b") == 7
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    assert run(*synth_args(images, tmp_path / "c")) == 0
    assert spoofs(tmp_path / "c") == 5


def test_unknown_config_key_is_usage_error(images, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"n_spoofs": 5}}))
    assert run("--config", cfg, *synth_args(images, tmp_path / "a")) == 1
    assert not (tmp_path / "a").exists()


def test_rerun_is_byte_identical(pipeline, tmp_path):
    w, _ = pipeline
    assert run("score", "--features", w / "feat.tsv", "--model", w / "fanet.ckpt", "--out", tmp_path / "fa.tsv") == 0
    assert (tmp_path / "fa.tsv").read_bytes() == (w / "fa.tsv").read_bytes()
    a = json.loads((tmp_path / "fa.tsv.meta.json").read_text())
    b = json.loads((w / "fa.tsv.meta.json").read_text())
    assert a == b


def test_refuses_to_clobber_foreign_directory(images, tmp_path):
    out = tmp_path / "mine"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert run(*synth_args(images, out, "--n", 3)) == 2
    assert (out / "keep.txt").read_text() == "x"
