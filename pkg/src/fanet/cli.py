"""``fanet`` command line: one subcommand per pipeline stage.

Every stage writes one primary artifact plus ``<artifact>.meta.json`` with
the seed, resolved configuration, its hash, library versions and the
sha256 of each input. Settings resolve as flags > config file > defaults;
the config file is JSON with optional top-level keys and one section per
subcommand, found via ``--config`` or ``$FANET_CONFIG``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DependencyError, FanetError, RejectedInputError

log = logging.getLogger("fanet")

CONFIG_ENV = "FANET_CONFIG"
EXIT_USAGE = 1

DEFAULTS = {
    "synth": {"n": 100, "seed": 0, "degrade_fraction": 0.0, "patch_mode": False, "patch_size": 128,
              "face_crop": True},
    "fit-cnn": {"epochs": 8, "input_size": 128, "hidden_dim": 4096, "batch_size": 32, "lr": 0.01, "seed": 0},
    "fit-quality": {"epochs": 300, "seed": 0, "jobs": 1},
    "extract": {"format": "text", "jobs": 1},
    "supervise": {},
    "train": {"epochs": 50, "batch_size": 128, "eta": 0.9, "sigma": 0.1, "beta": 0.5, "low_fraction": 0.3,
              "ablation": "full", "hidden": 0, "lr": 0.01, "seed": 0},
    "score": {},
    "gate": {"tf": 0.3, "threshold": None},
    "eval": {"tf": "0,0.1,0.2,0.3", "by_video": False},
    "demo": {"seed": 0, "jobs": 1, "n_spoof": 40, "degrade_fraction": 0.3, "cnn_epochs": 8, "fanet_epochs": 50,
             "hidden": 16},
}
# path-valued settings: recorded by basename only, so metadata is location independent
PATH_KEYS = {"genuine", "backgrounds", "corpus", "cnn", "quality_head", "features", "scores", "model",
             "fa_scores", "out", "data"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config, hashing, metadata

def _load_config(path):
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return data


def resolve_settings(command, args, config):
    """Merge defaults, config file (top level, then command section) and flags."""
    defaults = DEFAULTS[command]
    settings = dict(defaults)
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise UsageError(f"config section {command!r} must be an object")
    top = {k: v for k, v in config.items() if not isinstance(v, dict)}
    for source in (top, section):
        for key, value in source.items():
            key = key.replace("-", "_")
            if key in defaults:
                settings[key] = value
            elif source is section:
                raise UsageError(f"unknown setting {key!r} in config section {command!r}")
    for key, value in vars(args).items():
        if key in ("command", "func", "config", "log_level"):
            continue
        if value is not None:
            settings[key] = value
    if command == "gate" and getattr(args, "tf", None) is not None:
        settings["threshold"] = None
    return settings


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digest(path):
    """``(name, sha256)`` of an input. A corpus directory is represented by its
    manifest, any other directory by the names and contents of its files."""
    p = Path(path)
    if p.is_dir() and (p / "manifest.tsv").is_file():
        return "manifest.tsv", sha256_file(p / "manifest.tsv")
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(q for q in p.iterdir() if q.is_file()):
            h.update(f"{f.name}\0{sha256_file(f)}\n".encode())
        return p.name, h.hexdigest()
    return p.name, sha256_file(p)


def _public_settings(settings):
    out = {}
    for k, v in sorted(settings.items()):
        if k == "jobs":  # parallelism never changes results
            continue
        out[k] = Path(v).name if (k in PATH_KEYS and v is not None) else v
    return out


def run_metadata(command, settings, inputs):
    cfg = _public_settings(settings)
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return {
        "command": command,
        "seed": settings.get("seed"),
        "config": cfg,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "versions": {"fanet": __version__, "numpy": np.__version__,
                     "python": f"{sys.version_info.major}.{sys.version_info.minor}"},
        "inputs": dict(input_digest(p) for p in inputs),
    }


def meta_path(artifact):
    p = Path(artifact)
    return p.with_name(p.name + ".meta.json")


def write_meta(artifact, meta):
    _atomic_write_text(meta_path(artifact), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _atomic_write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic_file(path, writer):
    """Run ``writer(tmp_path)`` and move the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic_dir(path, writer):
    """Build a directory beside ``path`` and swap it in once complete."""
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise RejectedInputError(f"output {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not (path / ".fanet-output").exists():
        raise RejectedInputError(f"output directory {path} is not empty and was not written by fanet")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        writer(tmp)
        (tmp / ".fanet-output").write_text("")
        os.chmod(tmp, 0o755)
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def require(path, what):
    p = Path(path)
    if not p.exists():
        raise DependencyError(f"{what} {p} does not exist")
    return p


def check_fresh(artifacts, inputs):
    """Raise if an upstream artifact was built from a different version of
    one of this command's inputs."""
    current = dict(input_digest(p) for p in inputs)
    for art in artifacts:
        mp = meta_path(art)
        if not mp.is_file():
            continue
        try:
            recorded = json.loads(mp.read_text(encoding="utf-8")).get("inputs", {})
        except json.JSONDecodeError:
            continue
        for name, digest in recorded.items():
            if name in current and current[name] != digest:
                raise DependencyError(f"{Path(art).name} is stale: it was built from a different {name}; "
                                      f"rerun the stage that produces it")


# ---------------------------------------------------------------------------
# stages

def cmd_synth(s):
    from . import demo, synth

    genuine = demo.load_image_dir(require(s["genuine"], "genuine image directory"))
    backgrounds = demo.load_image_dir(require(s["backgrounds"], "background image directory"))
    if not genuine:
        raise DependencyError(f"no PNG images in {s['genuine']}")
    if not backgrounds:
        raise DependencyError(f"no PNG images in {s['backgrounds']}")
    corpus = synth.build_corpus(genuine, backgrounds, int(s["n"]), patch_mode=bool(s["patch_mode"]),
                                patch_size=int(s["patch_size"]), seed=int(s["seed"]),
                                degrade_fraction=float(s["degrade_fraction"]), face_crop=bool(s["face_crop"]))
    _atomic_dir(s["out"], lambda tmp: synth.write_corpus(corpus, tmp))
    gen, spoof = corpus.counts()
    log.info("wrote %d genuine and %d spoof samples to %s", gen, spoof, s["out"])
    return [s["genuine"], s["backgrounds"]]


def _corpus(s):
    from . import synth

    return synth.read_corpus(require(s["corpus"], "corpus directory"))


def cmd_fit_cnn(s):
    from . import forensic
    from .nn import SgdConfig

    corpus = _corpus(s)
    cfg = SgdConfig(learning_rate=float(s["lr"]))
    model = forensic.train_extractor(corpus.image_list(), corpus.labels(), cfg, int(s["epochs"]),
                                     batch_size=int(s["batch_size"]), seed=int(s["seed"]),
                                     input_size=int(s["input_size"]), hidden_dim=int(s["hidden_dim"]))
    acc = forensic.accuracy(model, corpus.image_list(), corpus.labels())
    log.info("forensic CNN training accuracy %.4f", acc)
    _atomic_file(s["out"], model.save)
    return [s["corpus"]]


def cmd_fit_quality(s):
    from . import supervision

    corpus = _corpus(s)
    pristine = {r.id: corpus.images[r.id] for r in corpus.records if r.degrade_level == 0}
    if len(pristine) < 2:
        raise RejectedInputError("the quality ladder needs at least two pristine corpus images")
    ladder = supervision.build_quality_ladder(pristine, seed=int(s["seed"]), jobs=int(s["jobs"]))
    tr, ho = supervision.split_ladder(ladder, seed=int(s["seed"]))
    head = supervision.train_quality_head(ladder.features[tr], ladder.targets[tr], epochs=int(s["epochs"]),
                                          seed=int(s["seed"]))
    log.info("quality head held-out MSE %.4f", supervision.head_mse(head, ladder.features[ho], ladder.targets[ho]))
    _atomic_file(s["out"], head.save)
    return [s["corpus"]]


def _extractor(path):
    from .forensic import ForensicExtractor

    return ForensicExtractor.load(require(path, "forensic model"))


def cmd_extract(s):
    from . import featio, iqa
    from .parallel import parallel_map

    corpus = _corpus(s)
    ext = _extractor(s["cnn"])
    check_fresh([s["cnn"]], [s["corpus"]])
    images = corpus.image_list()
    q = np.array(parallel_map(iqa.quality_features, images, int(s["jobs"])))
    f = ext.extract_batch(images)
    table = featio.FeatureTable(corpus.ids, q, f)
    if s["format"] not in ("text", "binary"):
        raise RejectedInputError("format must be 'text' or 'binary'")
    _atomic_file(s["out"], lambda tmp: featio.write_features(tmp, table, s["format"]))
    return [s["corpus"], s["cnn"]]


def _features(path):
    from . import featio

    return featio.read_features(require(path, "feature file"))


def cmd_supervise(s):
    from . import supervision

    corpus = _corpus(s)
    table = _features(s["features"])
    head = supervision.QualityHead.load(require(s["quality_head"], "quality head"))
    ext = _extractor(s["cnn"])
    check_fresh([s["features"]], [s["corpus"], s["cnn"]])
    labels = {i: int(v) for i, v in zip(corpus.ids, corpus.labels())}
    pairs = supervision.build_supervision(corpus.ids, table, head, ext, labels=labels)
    _atomic_file(s["out"], lambda tmp: supervision.write_scores(tmp, pairs))
    return [s["corpus"], s["features"], s["quality_head"], s["cnn"]]


def cmd_train(s):
    from . import quantifier
    from .nn import SgdConfig

    table = _features(s["features"])
    from .supervision import read_scores

    pairs = read_scores(require(s["scores"], "supervision scores"))
    check_fresh([s["scores"]], [s["features"]])
    ids = list(pairs)
    sub = table.subset(ids)
    cfg = quantifier.FanetConfig(sgd=SgdConfig(learning_rate=float(s["lr"])), epochs=int(s["epochs"]),
                                 batch_size=int(s["batch_size"]), sigma=float(s["sigma"]), beta=float(s["beta"]),
                                 eta=float(s["eta"]), low_fraction=float(s["low_fraction"]),
                                 ablation=s["ablation"], hidden=int(s["hidden"]), seed=int(s["seed"]))
    res = quantifier.train_fanet(sub.combined(), [pairs[i] for i in ids], cfg, ids=ids)
    log.info("FANet final epoch loss %.6f", res.epoch_loss[-1])
    _atomic_file(s["out"], res.model.save)
    return [s["features"], s["scores"]]


def _fanet(path):
    from .quantifier import FanetModel

    return FanetModel.load(require(path, "FANet model"))


def cmd_score(s):
    from . import quantifier

    table = _features(s["features"])
    model = _fanet(s["model"])
    check_fresh([s["model"]], [s["features"]])
    x = table.combined()
    y_hat = model.predict(x)
    scores = model.score(x)
    _atomic_file(s["out"], lambda tmp: quantifier.write_fa_scores(tmp, table.ids, scores, y_hat))
    return [s["features"], s["model"]]


def _fa_scores(path):
    from .quantifier import read_fa_scores

    data = read_fa_scores(require(path, "forensicability scores"))
    return list(data), np.array([v[0] for v in data.values()])


def _gate_config(s):
    from .gate import GateConfig

    if s.get("threshold") is not None:
        return GateConfig(threshold=float(s["threshold"]))
    return GateConfig(t_f=float(s["tf"]))


def cmd_gate(s):
    from . import gate

    ids, f = _fa_scores(s["fa_scores"])
    acc = gate.gate(ids, f, _gate_config(s))
    lines = ["#fanet-gate v1", "id\tF\taccepted"]
    lines += [f"{i}\t{float(v)!r}\t{int(a)}" for i, v, a in zip(ids, f, acc)]
    _atomic_file(s["out"], lambda tmp: Path(tmp).write_text("\n".join(lines) + "\n", encoding="utf-8"))
    log.info("accepted %d of %d samples", int(acc.sum()), len(acc))
    return [s["fa_scores"]]


def _parse_tfs(text):
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--tf expects comma-separated fractions, got {text!r}") from None
    if not values:
        raise UsageError("--tf needs at least one value")
    return values


def cmd_eval(s):
    from . import gate, iqa

    tfs = _parse_tfs(s["tf"])
    corpus = _corpus(s)
    table = _features(s["features"])
    ids, f = _fa_scores(s["fa_scores"])
    ext = _extractor(s["cnn"])
    model = _fanet(s["model"])
    check_fresh([s["features"], s["fa_scores"]], [s["corpus"], s["cnn"], s["model"]])
    records = {r.id: r for r in corpus.records}
    missing = [i for i in ids if i not in records]
    if missing:
        raise RejectedInputError(f"scores list ids absent from the corpus: {', '.join(missing[:5])}")
    labels = np.array([records[i].label for i in ids])
    groups = [records[i].group for i in ids] if s["by_video"] else None
    classifier = gate.ForensicHeadClassifier(ext)
    cls = classifier.score(table, ids)
    h, w = corpus.images[ids[0]].shape[:2]
    o_fa = (iqa.iqa_flops(h, w) + ext.flops() + model.flops()) / gate.GFLOP

    def write(tmp):
        for t in tfs:
            rep = gate.evaluate(ids, labels, f, cls, gate.GateConfig(t_f=t), groups=groups,
                                o_fa=o_fa, o_fi=classifier.gflops)
            stem = f"report_tf{t:.2f}"
            (tmp / f"{stem}.tsv").write_text(rep.to_tsv(), encoding="utf-8")
            (tmp / f"{stem}.txt").write_text(rep.to_table(), encoding="utf-8")
            log.info("T_F=%.2f: EER all %.4f remaining %.4f", t, rep.eer_all, rep.eer_remaining)
        plot = gate.plot_data(f, cls, labels, t_fs=tfs, groups=groups, ids=ids)
        (tmp / "plot_data.tsv").write_text(plot, encoding="utf-8")

    _atomic_dir(s["out"], write)
    return [s["corpus"], s["features"], s["fa_scores"], s["cnn"], s["model"]]


def cmd_demo(s):
    """Run every stage on the bundled demo images into ``out``."""
    from . import demo

    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    data = Path(s["data"]) if s.get("data") else demo.bundled_demo_dir()
    if not (data / "genuine").is_dir():
        log.info("demo images not found at %s; generating them", data)
        data = out / "demo-images"
        demo.write_demo_corpus(data, seed=0)
    seed, jobs = int(s["seed"]), int(s["jobs"])
    steps = [
        ("synth", {"genuine": data / "genuine", "backgrounds": data / "backgrounds", "n": s["n_spoof"],
                   "seed": seed, "degrade_fraction": s["degrade_fraction"], "out": out / "corpus"}),
        ("fit-cnn", {"corpus": out / "corpus", "epochs": s["cnn_epochs"], "seed": seed, "out": out / "cnn.ckpt"}),
        ("fit-quality", {"corpus": out / "corpus", "seed": seed, "jobs": jobs, "out": out / "quality.ckpt"}),
        ("extract", {"corpus": out / "corpus", "cnn": out / "cnn.ckpt", "jobs": jobs, "out": out / "features.tsv"}),
        ("supervise", {"corpus": out / "corpus", "features": out / "features.tsv",
                       "quality_head": out / "quality.ckpt", "cnn": out / "cnn.ckpt", "out": out / "scores.tsv"}),
        ("train", {"features": out / "features.tsv", "scores": out / "scores.tsv", "epochs": s["fanet_epochs"],
                   "hidden": s["hidden"], "seed": seed, "out": out / "fanet.ckpt"}),
        ("score", {"features": out / "features.tsv", "model": out / "fanet.ckpt", "out": out / "fa_scores.tsv"}),
        ("gate", {"fa_scores": out / "fa_scores.tsv", "out": out / "gate.tsv"}),
        ("eval", {"corpus": out / "corpus", "features": out / "features.tsv", "fa_scores": out / "fa_scores.tsv",
                  "cnn": out / "cnn.ckpt", "model": out / "fanet.ckpt", "out": out / "reports"}),
    ]
    for name, overrides in steps:
        settings = dict(DEFAULTS[name])
        settings.update({k: (str(v) if isinstance(v, Path) else v) for k, v in overrides.items()})
        log.info("demo: %s", name)
        run_stage(name, settings)
    print((out / "reports" / "report_tf0.30.txt").read_text(encoding="utf-8"), end="")
    return []


COMMANDS = {
    "synth": cmd_synth, "fit-cnn": cmd_fit_cnn, "fit-quality": cmd_fit_quality, "extract": cmd_extract,
    "supervise": cmd_supervise, "train": cmd_train, "score": cmd_score, "gate": cmd_gate, "eval": cmd_eval,
    "demo": cmd_demo,
}


def run_stage(command, settings):
    inputs = COMMANDS[command](settings)
    if command != "demo":
        write_meta(settings["out"], run_metadata(command, settings, inputs))


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    p = _Parser(prog="fanet", description="Forensicability assessment: synthesize corpora, extract features, "
                "train FANet, score, gate and evaluate.")
    p.add_argument("--version", action="version", version=f"fanet {__version__}")
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, parents=[common])
        sp.add_argument("--out", required=name != "demo", default=None, help="output artifact path")
        return sp

    def opt(sp, flag, kind=None, help_text="", **kw):
        sp.add_argument(flag, type=kind, default=None, help=help_text, **kw)

    sp = cmd("synth", "Synthesize a spoof corpus from genuine and background image directories.")
    opt(sp, "--genuine", str, "directory of genuine PNG images", required=True)
    opt(sp, "--backgrounds", str, "directory of background PNG images", required=True)
    opt(sp, "--n", int, "number of spoof samples (default 100)")
    opt(sp, "--seed", int, "random seed (default 0)")
    opt(sp, "--degrade-fraction", float, "fraction of samples given a degradation level (default 0)")
    sp.add_argument("--patch-mode", action="store_const", const=True, default=None,
                    help="tile documents into non-overlapping patches")
    opt(sp, "--patch-size", int, "patch side in pixels (default 128)")
    sp.add_argument("--no-face-crop", dest="face_crop", action="store_const", const=False, default=None,
                    help="skip the random crop step")

    sp = cmd("fit-cnn", "Train the forensic CNN on a corpus.")
    opt(sp, "--corpus", str, "corpus directory", required=True)
    opt(sp, "--epochs", int, "training epochs (default 8)")
    opt(sp, "--input-size", int, "network input side (default 128)")
    opt(sp, "--hidden-dim", int, "width of the first dense layer (default 4096)")
    opt(sp, "--batch-size", int, "mini-batch size (default 32)")
    opt(sp, "--lr", float, "initial learning rate (default 0.01)")
    opt(sp, "--seed", int, "random seed (default 0)")

    sp = cmd("fit-quality", "Train the quality head on a degradation ladder of the corpus's pristine images.")
    opt(sp, "--corpus", str, "corpus directory", required=True)
    opt(sp, "--epochs", int, "training epochs (default 300)")
    opt(sp, "--seed", int, "random seed (default 0)")
    opt(sp, "--jobs", int, "worker processes (default 1, 0 = all cores)")

    sp = cmd("extract", "Compute the 94 quality and 128 forensic features of every corpus image.")
    opt(sp, "--corpus", str, "corpus directory", required=True)
    opt(sp, "--cnn", str, "forensic CNN checkpoint", required=True)
    opt(sp, "--format", str, "text or binary (default text)", choices=["text", "binary"])
    opt(sp, "--jobs", int, "worker processes (default 1, 0 = all cores)")

    sp = cmd("supervise", "Produce (y_Q, y_F) supervision scores.")
    opt(sp, "--corpus", str, "corpus directory", required=True)
    opt(sp, "--features", str, "feature file", required=True)
    opt(sp, "--quality-head", str, "quality head checkpoint", required=True)
    opt(sp, "--cnn", str, "forensic CNN checkpoint", required=True)

    sp = cmd("train", "Train FANet on features and supervision scores.")
    opt(sp, "--features", str, "feature file", required=True)
    opt(sp, "--scores", str, "supervision scores file", required=True)
    opt(sp, "--epochs", int, "training epochs (default 50)")
    opt(sp, "--batch-size", int, "mini-batch size (default 128)")
    opt(sp, "--eta", float, "center momentum (default 0.9)")
    opt(sp, "--sigma", float, "kernel size (default 0.1)")
    opt(sp, "--beta", float, "score mixing weight (default 0.5)")
    opt(sp, "--low-fraction", float, "share of samples labeled low (default 0.3)")
    opt(sp, "--ablation", str, "full, no_low_class, random_centers or quality_only",
        choices=["full", "no_low_class", "random_centers", "quality_only"])
    opt(sp, "--hidden", int, "hidden units per score-mapping branch, 0 for none (default 0)")
    opt(sp, "--lr", float, "initial learning rate (default 0.01)")
    opt(sp, "--seed", int, "random seed (default 0)")

    sp = cmd("score", "Compute forensicability scores F for every feature row.")
    opt(sp, "--features", str, "feature file", required=True)
    opt(sp, "--model", str, "FANet checkpoint", required=True)

    sp = cmd("gate", "Accept or reject samples by forensicability.")
    opt(sp, "--fa-scores", str, "forensicability scores file", required=True)
    mx = sp.add_mutually_exclusive_group()
    mx.add_argument("--tf", type=float, default=None, help="fraction of lowest-F samples to reject (default 0.3)")
    mx.add_argument("--threshold", type=float, default=None, help="reject samples with F below this value")

    sp = cmd("eval", "Gate at each T_F and report the stub classifier's EER on each partition.")
    opt(sp, "--corpus", str, "corpus directory (labels and video groups)", required=True)
    opt(sp, "--features", str, "feature file", required=True)
    opt(sp, "--fa-scores", str, "forensicability scores file", required=True)
    opt(sp, "--cnn", str, "forensic CNN checkpoint (the stub classifier)", required=True)
    opt(sp, "--model", str, "FANet checkpoint (for the operation count)", required=True)
    opt(sp, "--tf", str, "comma-separated rejection fractions (default 0,0.1,0.2,0.3)")
    sp.add_argument("--by-video", action="store_const", const=True, default=None,
                    help="average frame scores per manifest group and gate whole videos")

    sp = cmd("demo", "Run the whole pipeline on the bundled demo images.")
    opt(sp, "--data", str, "demo image root with genuine/ and backgrounds/ (default: bundled)")
    opt(sp, "--seed", int, "random seed (default 0)")
    opt(sp, "--jobs", int, "worker processes (default 1, 0 = all cores)")
    opt(sp, "--n-spoof", int, "spoof samples to synthesize (default 40)")
    opt(sp, "--degrade-fraction", float, "fraction of degraded samples (default 0.3)")
    opt(sp, "--cnn-epochs", int, "forensic CNN epochs (default 8)")
    opt(sp, "--fanet-epochs", int, "FANet epochs (default 50)")
    opt(sp, "--hidden", int, "FANet hidden units per branch (default 16)")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        settings = resolve_settings(args.command, args, _load_config(args.config))
        if args.command == "demo" and not settings.get("out"):
            settings["out"] = "fanet-demo"
        run_stage(args.command, settings)
    except UsageError as exc:
        print(f"fanet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FanetError as exc:
        print(f"fanet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"fanet: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
