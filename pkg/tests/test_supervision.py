import numpy as np
import pytest

from fanet import demo, forensic, supervision, synth
from fanet.errors import FormatError, ModelNotReadyError, PartialCorpusError, RejectedInputError
from fanet.featio import FeatureTable
from fanet.imageops import gaussian_blur
from fanet.iqa import quality_features

SIZE = 64


@pytest.fixture(scope="module")
def ladder():
    base = demo.genuine_images(40, 21, size=SIZE)
    return supervision.build_quality_ladder(base, seed=0, jobs=2)


@pytest.fixture(scope="module")
def head(ladder):
    tr, _ = supervision.split_ladder(ladder, seed=0)
    return supervision.train_quality_head(ladder.features[tr], ladder.targets[tr], seed=0)


def test_score_pair_range():
    supervision.ScorePair(0.0, 1.0)
    with pytest.raises(RejectedInputError):
        supervision.ScorePair(1.2, 0.5)
    with pytest.raises(RejectedInputError):
        supervision.ScorePair(0.5, float("nan"))


def test_pseudo_mos_endpoints(ladder):
    assert supervision.pseudo_mos(0, 4) == 1.0
    assert supervision.pseudo_mos(3, 4) == 0.0
    np.testing.assert_allclose(np.unique(ladder.targets), [0.0, 1 / 3, 2 / 3, 1.0], rtol=0, atol=1e-12)


def test_ladder_needs_two_levels():
    with pytest.raises(RejectedInputError):
        supervision.build_quality_ladder({"a": np.zeros((SIZE, SIZE))}, ((0.0, 0.0),))


def test_split_keeps_bases_apart(ladder):
    tr, ho = supervision.split_ladder(ladder, seed=0)
    bases = np.array(ladder.base_ids)
    assert not set(bases[tr]) & set(bases[ho])
    assert (tr | ho).all()


def test_held_out_mse(head, ladder):
    _, ho = supervision.split_ladder(ladder, seed=0)
    assert supervision.head_mse(head, ladder.features[ho], ladder.targets[ho]) <= 0.05


def test_shuffled_targets_do_not_generalize(ladder):
    tr, ho = supervision.split_ladder(ladder, seed=0)
    rng = np.random.default_rng(0)
    shuffled = rng.permutation(ladder.targets[tr])
    bad = supervision.train_quality_head(ladder.features[tr], shuffled, seed=0)
    assert supervision.head_mse(bad, ladder.features[ho], ladder.targets[ho]) > 0.05


def test_outputs_in_open_unit_interval(head, ladder):
    y = head.predict(ladder.features)
    assert np.all((y > 0) & (y < 1))


def test_sharp_beats_heavily_blurred(head):
    img = demo.genuine_images(1, 99, size=SIZE)["g00000"]
    sharp = supervision.quality_score(head, quality_features(img))
    blurred = supervision.quality_score(head, quality_features(gaussian_blur(img, 5.0)))
    assert sharp > blurred


def test_quality_decreases_along_blur_levels(head):
    imgs = demo.genuine_images(12, 77, size=SIZE).values()
    means = []
    for sigma in (0.0, 1.0, 2.0, 4.0):
        feats = np.array([quality_features(gaussian_blur(im, sigma)) for im in imgs])
        means.append(head.predict(feats).mean())
    assert all(a > b for a, b in zip(means, means[1:]))


def test_untrained_head_not_ready():
    with pytest.raises(ModelNotReadyError):
        supervision.QualityHead().predict(np.zeros((1, 94)))


def test_head_checkpoint_round_trip(tmp_path, head, ladder):
    head.save(tmp_path / "q.ckpt")
    back = supervision.QualityHead.load(tmp_path / "q.ckpt")
    assert back.predict(ladder.features[:5]).tobytes() == head.predict(ladder.features[:5]).tobytes()


@pytest.fixture(scope="module")
def corpus_and_extractor():
    g = demo.genuine_images(40, 5, size=32)
    b = demo.background_images(6, 5, size=32)
    corpus = synth.build_corpus(g, b, 40, seed=5)
    ext = forensic.train_extractor(corpus.image_list(), corpus.labels(), epochs=10, input_size=32, seed=0)
    return corpus, ext


def test_forensic_score_separates_classes(corpus_and_extractor):
    corpus, ext = corpus_and_extractor
    f = ext.extract_batch(corpus.image_list())
    y = supervision.forensic_score(ext, f)
    labels = corpus.labels()
    assert y[labels == 0].mean() < y[labels == 1].mean()
    assert np.mean(y[labels == 1] > 0.5) >= 0.9


def test_forensic_score_needs_trained_head():
    with pytest.raises(ModelNotReadyError):
        supervision.forensic_score(forensic.ForensicExtractor.initialized(32), np.zeros(128))


def test_build_supervision_reports_missing(corpus_and_extractor, head):
    corpus, ext = corpus_and_extractor
    ids = corpus.ids[:4]
    table = FeatureTable(ids, np.zeros((4, 94)), np.zeros((4, 128)))
    with pytest.raises(PartialCorpusError) as err:
        supervision.build_supervision(ids + ["ghost"], table, head, ext)
    assert "ghost" in str(err.value)
    pairs = supervision.build_supervision(ids, table, head, ext)
    assert list(pairs) == ids
    assert all(0 <= p.y_q <= 1 and 0 <= p.y_f <= 1 for p in pairs.values())


def test_scores_file_round_trip(tmp_path):
    pairs = {"a": supervision.ScorePair(0.25, 0.75, 1), "b": supervision.ScorePair(1 / 3, 0.1, None)}
    path = tmp_path / "s.tsv"
    supervision.write_scores(path, pairs)
    assert supervision.read_scores(path) == pairs


def test_scores_file_rejects_out_of_range(tmp_path):
    path = tmp_path / "s.tsv"
    path.write_text(supervision.SCORES_MAGIC + "\n" + "\t".join(supervision.SCORES_COLUMNS) + "\nx\t1.5\t0.2\tgenuine\n")
    with pytest.raises(FormatError, match="x"):
        supervision.read_scores(path)
