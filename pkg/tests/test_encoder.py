import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqmem.encoder import (START_TOKEN, ConfigurationError, Sdr, Vocabulary, build_vocabulary,
                            encode, load_stopwords, make_noise_word, read_token_file,
                            tokenize_and_filter)


def test_b_equal_m_takes_every_column():
    v = build_vocabulary(["a"], n_columns=8, columns_per_item=8)
    assert encode(v, v.code("a")).active_columns == tuple(range(8))


def test_same_seed_gives_identical_assignment():
    a = build_vocabulary(["round", "bus"], 1024, 6, seed=7)
    b = build_vocabulary(["round", "bus"], 1024, 6, seed=7)
    assert a.column_assignment == b.column_assignment
    assert a.digest() == b.digest()
    for tok in ("round", "bus"):
        assert len(set(a.column_assignment[a.code(tok)])) == 6


def test_different_seed_changes_assignment():
    a = build_vocabulary(["round", "bus"], 1024, 6, seed=7)
    b = build_vocabulary(["round", "bus"], 1024, 6, seed=8)
    assert a.column_assignment != b.column_assignment


def test_duplicate_tokens_collapse():
    v = build_vocabulary(["x", "x"], 64, 4)
    assert len(v) == 2  # x plus the start item
    assert v.word_items == [v.code("x")]


def test_start_item_is_present():
    v = build_vocabulary(["a", "b"], 64, 4)
    assert START_TOKEN in v
    assert v.start_item == v.code(START_TOKEN)
    assert v.start_item not in v.word_items
    assert len(encode(v, v.start_item)) == 4


@pytest.mark.parametrize("kwargs", [dict(n_columns=4, columns_per_item=5),
                                    dict(n_columns=4, columns_per_item=0)])
def test_bad_sizes_raise(kwargs):
    with pytest.raises(ConfigurationError):
        build_vocabulary(["a"], **kwargs)


def test_empty_tokens_raise():
    with pytest.raises(ConfigurationError):
        build_vocabulary([], 64, 4)


def test_encode_unknown_item():
    v = build_vocabulary(["a"], 64, 4)
    with pytest.raises(KeyError):
        encode(v, 999)


def test_exactly_enough_sets_are_all_used():
    # C(3,2)=3 distinct pairs for the start item plus two words
    v = build_vocabulary(["a", "b"], n_columns=3, columns_per_item=2)
    assert len(set(v.column_assignment.values())) == 3


def test_too_few_sets_are_shared():
    v = build_vocabulary(["a", "b", "c"], n_columns=3, columns_per_item=2)
    assert len(v.column_assignment) == 4


def test_sdr_is_sorted_and_duplicate_free():
    assert Sdr((3, 1, 3), 8).active_columns == (1, 3)


@pytest.mark.parametrize("cols", [(1, 8), (-1, 2)])
def test_sdr_rejects_out_of_range(cols):
    with pytest.raises(ValueError):
        Sdr(cols, 8)


def test_noise_word_shape():
    rng = np.random.default_rng(0)
    w = make_noise_word(1024, 6, rng)
    assert len(set(w.active_columns)) == 6
    assert all(0 <= c < 1024 for c in w.active_columns)


def test_noise_word_full_width():
    assert make_noise_word(5, 5, np.random.default_rng(1)).active_columns == (0, 1, 2, 3, 4)


def test_noise_word_too_wide():
    with pytest.raises(ConfigurationError):
        make_noise_word(4, 5, np.random.default_rng(0))


def test_noise_words_rarely_collide():
    rng = np.random.default_rng(3)
    words = {make_noise_word(1024, 6, rng).active_columns for _ in range(1000)}
    assert len(words) >= 999


def test_vocabulary_round_trip():
    v = build_vocabulary(["sky", "bird"], 128, 6, seed=2)
    w = Vocabulary.from_dict(v.to_dict())
    assert w == v
    assert w.digest() == v.digest()


def test_tokenize_against_shipped_stopwords():
    stop = load_stopwords()
    assert {"of", "the", "go", "and"} <= stop
    assert tokenize_and_filter("Wheels of the bus go round and round", stop) == [
        "wheels", "bus", "round", "round"]


def test_tokenize_empty():
    assert tokenize_and_filter("", load_stopwords()) == []


def test_tokenize_strips_punctuation_before_filtering():
    stop = load_stopwords()
    # "one," and "two," are stopwords only once the comma is gone
    assert tokenize_and_filter("One, two, buckle my shoe", stop) == ["buckle", "shoe"]


def test_shipped_stopwords_has_100_entries():
    assert len(load_stopwords()) == 100


def test_token_file_comments(tmp_path):
    p = tmp_path / "stop.txt"
    p.write_text("# header\nThe\n\nof  # trailing\n", encoding="utf-8")
    assert read_token_file(p) == ["the", "of"]


@given(st.lists(st.text(alphabet="abcdefgh", min_size=1, max_size=4), min_size=1, max_size=30),
       st.integers(0, 2**31 - 1))
def test_distinct_items_get_distinct_sets(tokens, seed):
    v = build_vocabulary(tokens, 64, 3, seed)
    sets = list(v.column_assignment.values())
    assert len(set(sets)) == len(sets)
    assert all(len(s) == 3 and list(s) == sorted(set(s)) for s in sets)


@given(st.text(max_size=80))
def test_tokenize_is_idempotent(text):
    stop = load_stopwords()
    once = tokenize_and_filter(text, stop)
    assert tokenize_and_filter(" ".join(once), stop) == once
