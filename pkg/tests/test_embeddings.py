import numpy as np
import pytest

from hotflip.embeddings import (
    UNKNOWN_TAG,
    EmbeddingTable,
    PosLexicon,
    cosine,
    load_embeddings,
    load_stopwords,
    save_embeddings,
    stem,
)
from hotflip.errors import ParseError


def test_load_embeddings_with_header_and_duplicates(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("3 2\ngood 1 0\nfine 0.5 0.5\ngood 9 9\n", encoding="utf-8")
    table = load_embeddings(path)
    assert table.words == ("good", "fine")
    np.testing.assert_array_equal(table.vector("good"), [1.0, 0.0])
    assert table.dimensions == 2


def test_load_embeddings_without_header(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("a 1 2 3\nb 4 5 6\n", encoding="utf-8")
    assert load_embeddings(path).vectors.shape == (2, 3)


@pytest.mark.parametrize("content, line", [("a 1 2\nb 1\n", 2), ("a 1 x\n", 1)])
def test_load_embeddings_rejects_bad_rows(tmp_path, content, line):
    path = tmp_path / "vectors.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_embeddings(path)
    assert info.value.line == line


def test_save_then_load(tmp_path):
    table = EmbeddingTable(("x", "y"), np.array([[0.1, -2.5], [3.0, 1e-3]]))
    restored = load_embeddings(save_embeddings(table, tmp_path / "out.txt"))
    assert restored.words == table.words
    np.testing.assert_array_equal(restored.vectors, table.vectors)


def test_cosine():
    assert cosine(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(1.0)
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)
    assert cosine(np.zeros(2), np.array([1.0, 1.0])) == 0.0


def test_similarity_of_missing_word():
    table = EmbeddingTable(("a",), np.ones((1, 2)))
    assert table.similarity("a", "b") is None


def test_pos_lexicon(tmp_path):
    path = tmp_path / "lexicon.tsv"
    path.write_text("good\tJJ\nrun\tVB\ngood\tNN\n", encoding="utf-8")
    lexicon = PosLexicon.load(path)
    assert lexicon.tag("good") == "JJ"
    assert lexicon.tag("missing") == UNKNOWN_TAG


def test_pos_lexicon_rejects_lines_without_tab(tmp_path):
    path = tmp_path / "lexicon.tsv"
    path.write_text("good JJ\n", encoding="utf-8")
    with pytest.raises(ParseError):
        PosLexicon.load(path)


def test_stem_joins_inflections():
    assert stem("pleasing") == stem("pleased")
    assert stem("Running") == stem("run")
    assert stem("film") != stem("story")


def test_stopwords(tmp_path):
    assert {"the", "a", "and"} <= load_stopwords()
    path = tmp_path / "stop.txt"
    path.write_text("# custom list\nFoo\n\nbar\n", encoding="utf-8")
    assert load_stopwords(path) == frozenset({"foo", "bar"})
