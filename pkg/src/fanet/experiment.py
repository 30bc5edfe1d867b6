"""End-to-end experiment on procedural corpora: train the forensic CNN and
quality head, build supervision, train FANet, then gate an evaluation
corpus and measure the stub classifier on each partition.

Three disjoint corpora keep the stages honest: A trains the CNN and the
quality head, B trains FANet, C is evaluated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import demo, forensic, gate, iqa, quantifier, supervision, synth
from .featio import FeatureTable
from .nn import SgdConfig
from .parallel import parallel_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    size: int = 128
    n_train_cnn: int = 300
    n_train_fanet: int = 500
    n_eval: int = 500
    n_backgrounds: int = 20
    n_ladder: int = 60
    degrade_fraction: float = 0.3
    cnn_epochs: int = 8
    cnn_input: int = 128
    fanet_epochs: int = 50
    fanet_hidden: int = 16
    eta: float = 0.9
    t_f: float = 0.3
    jobs: int = 1


@dataclass
class ExperimentResult:
    reports: dict = field(default_factory=dict)
    cnn_accuracy: float = 0.0
    ladder_mse: float = 0.0
    degraded_rejected: float = 0.0


def _corpus(cfg, tag, n, degrade_fraction):
    base = cfg.seed * 1000 + tag
    genuine = demo.genuine_images(n, base, cfg.size, prefix=f"c{tag}g")
    backgrounds = demo.background_images(cfg.n_backgrounds, base, cfg.size, prefix=f"c{tag}b")
    return synth.build_corpus(genuine, backgrounds, n, seed=base, degrade_fraction=degrade_fraction)


def features_for(corpus, extractor, jobs=1):
    images = corpus.image_list()
    q = np.array(parallel_map(iqa.quality_features, images, jobs))
    f = extractor.extract_batch(images)
    return FeatureTable(corpus.ids, q, f)


def o_fa_gflops(extractor, fanet_model, size):
    return (iqa.iqa_flops(size, size) + extractor.flops() + fanet_model.flops()) / gate.GFLOP


def run(cfg=None):
    cfg = cfg or ExperimentConfig()
    out = ExperimentResult()

    corpus_a = _corpus(cfg, 1, cfg.n_train_cnn, 0.0)
    log.info("training forensic CNN on %d images", len(corpus_a.records))
    extractor = forensic.train_extractor(corpus_a.image_list(), corpus_a.labels(), SgdConfig(),
                                         cfg.cnn_epochs, seed=cfg.seed, input_size=cfg.cnn_input)
    out.cnn_accuracy = forensic.accuracy(extractor, corpus_a.image_list(), corpus_a.labels())

    # pristine samples of both classes, so synthesis blur alone does not read as poor quality
    step = max(1, len(corpus_a.records) // cfg.n_ladder)
    ladder_src = dict(list(corpus_a.images.items())[::step][:cfg.n_ladder])
    ladder = supervision.build_quality_ladder(ladder_src, seed=cfg.seed, jobs=cfg.jobs)
    tr, ho = supervision.split_ladder(ladder, seed=cfg.seed)
    head = supervision.train_quality_head(ladder.features[tr], ladder.targets[tr], seed=cfg.seed)
    out.ladder_mse = supervision.head_mse(head, ladder.features[ho], ladder.targets[ho])

    corpus_b = _corpus(cfg, 2, cfg.n_train_fanet, cfg.degrade_fraction)
    corpus_c = _corpus(cfg, 3, cfg.n_eval, cfg.degrade_fraction)
    feats_b = features_for(corpus_b, extractor, cfg.jobs)
    feats_c = features_for(corpus_c, extractor, cfg.jobs)
    pairs = supervision.build_supervision(corpus_b.ids, feats_b, head, extractor)
    sup = [pairs[i] for i in corpus_b.ids]

    classifier = gate.ForensicHeadClassifier(extractor)
    cls_scores = classifier.score(feats_c, corpus_c.ids)
    degraded = np.array([r.degrade_level > 0 for r in corpus_c.records])
    for ablation in ("full", "quality_only"):
        fcfg = quantifier.FanetConfig(epochs=cfg.fanet_epochs, eta=cfg.eta, ablation=ablation,
                                      hidden=cfg.fanet_hidden, seed=cfg.seed)
        model = quantifier.train_fanet(feats_b.combined(), sup, fcfg, ids=corpus_b.ids).model
        f_scores = model.score(feats_c.combined())
        rep = gate.evaluate(corpus_c.ids, corpus_c.labels(), f_scores, cls_scores, gate.GateConfig(t_f=cfg.t_f),
                            o_fa=o_fa_gflops(extractor, model, cfg.size), o_fi=classifier.gflops)
        out.reports[ablation] = rep
        if ablation == "full":
            acc = np.array([s.accepted for s in rep.samples])
            out.degraded_rejected = float(np.mean(degraded[~acc])) if (~acc).any() else 0.0
    return out
