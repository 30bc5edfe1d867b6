import numpy as np
import pytest

from fanet import featio
from fanet.errors import FormatError, PartialCorpusError, RejectedInputError


def _table(n=3, seed=0, quality=True, forensic=True):
    rng = np.random.default_rng(seed)
    return featio.FeatureTable(
        [f"img{i}" for i in range(n)],
        rng.normal(size=(n, 94)) if quality else None,
        rng.normal(size=(n, 128)) * 1e-7 if forensic else None,
    )


@pytest.mark.parametrize("fmt", ["text", "binary"])
def test_round_trip_is_bit_exact(tmp_path, fmt):
    t = _table()
    path = tmp_path / "f.dat"
    featio.write_features(path, t, fmt)
    back = featio.read_features(path)
    assert back.ids == t.ids
    assert back.quality.tobytes() == t.quality.tobytes()
    assert back.forensic.tobytes() == t.forensic.tobytes()


def test_text_header_documents_dims(tmp_path):
    path = tmp_path / "f.tsv"
    featio.write_text(path, _table(forensic=False))
    first = path.read_text().splitlines()[0]
    assert first == "#fanet-features v1 quality=94 forensic=0"
    assert featio.read_features(path).forensic is None


def test_combined_is_222_wide():
    assert _table().combined().shape == (3, featio.MODEL_INPUT_DIM) == (3, 222)


def test_combined_needs_both_blocks():
    with pytest.raises(RejectedInputError):
        _table(forensic=False).combined()


def test_short_record_names_offender(tmp_path):
    path = tmp_path / "f.tsv"
    featio.write_text(path, _table(quality=False))
    lines = path.read_text().splitlines()
    parts = lines[2].split("\t")
    lines[2] = "\t".join(parts[:-1])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="img1"):
        featio.read_features(path)


def test_bad_header_and_non_numeric(tmp_path):
    path = tmp_path / "f.tsv"
    path.write_text("#fanet-features v2 quality=94 forensic=0\n")
    with pytest.raises(FormatError):
        featio.read_features(path)
    path.write_text("#fanet-features v1 quality=0 forensic=128\nx\t" + "\t".join(["a"] * 128) + "\n")
    with pytest.raises(FormatError, match="x"):
        featio.read_features(path)


def test_empty_file_gives_empty_table(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    assert len(featio.read_features(path)) == 0


def test_duplicate_and_invalid_ids_rejected():
    with pytest.raises(RejectedInputError):
        featio.FeatureTable(["a", "a"], np.zeros((2, 94)))
    with pytest.raises(RejectedInputError):
        featio.FeatureTable(["a\tb"], np.zeros((1, 94)))


def test_subset_reports_missing_ids():
    with pytest.raises(PartialCorpusError) as err:
        _table().subset(["img0", "nope", "gone"])
    assert "nope" in str(err.value) and "gone" in str(err.value)
    sub = _table().subset(["img2", "img0"])
    assert sub.ids == ["img2", "img0"]
    np.testing.assert_array_equal(sub.quality[0], _table().quality[2])
