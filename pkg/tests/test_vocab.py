import pytest

from qalign import vocab as V


@pytest.fixture
def small_vocab():
    corpus = [
        "Question: who is x Answer: <mask>. Context: x is y .",
        "a b a",
        "the cat sat",
    ]
    return V.build_vocab(corpus, max_size=512)


class TestBuildVocab:
    def test_words_present(self):
        v = V.build_vocab(["a b", "a"], max_size=512)
        assert "a" in v.token_to_id and "b" in v.token_to_id

    def test_deterministic(self):
        corpus = ["x y z", "y z", "z"]
        v1 = V.build_vocab(corpus, max_size=512)
        v2 = V.build_vocab(corpus, max_size=512)
        assert v1.id_to_token == v2.id_to_token

    def test_frequency_tie_breaks_lexicographically(self):
        # "bb" and "aa" both occur twice; "aa" must get the lower id
        v = V.build_vocab(["bb aa", "aa bb"], max_size=512)
        assert v.token_to_id["aa"] < v.token_to_id["bb"]

    def test_higher_frequency_gets_lower_id(self):
        v = V.build_vocab(["zz zz zz yy"], max_size=512)
        assert v.token_to_id["zz"] < v.token_to_id["yy"]

    def test_max_size_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            V.build_vocab(["a"], max_size=V.N_SPECIALS + 256)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            V.build_vocab([], max_size=512)

    def test_specials_first_and_dense(self, small_vocab):
        assert small_vocab.id_to_token[: V.N_SPECIALS] == V.SPECIAL_TOKENS
        assert len(set(small_vocab.id_to_token)) == len(small_vocab)
        ids = sorted(small_vocab.token_to_id.values())
        assert ids == list(range(len(small_vocab)))


class TestEncode:
    def test_round_trip(self, small_vocab):
        s = "Question: who is x"
        assert V.decode(small_vocab, V.encode(small_vocab, s)) == s

    def test_mask_marker_maps_to_mask_id(self, small_vocab):
        ids = V.encode(small_vocab, "who is <mask> here")
        assert ids.count(V.MASK_ID) == 1
        assert ids[2] == V.MASK_ID

    def test_unknown_word_falls_back_to_characters(self):
        v = V.build_vocab(["q z here"], max_size=512)
        assert "qz" not in v.token_to_id
        ids = V.encode(v, "qz")
        assert ids == [v.token_to_id["q"], v.token_to_id["z"]]

    def test_unknown_character_is_an_error(self, small_vocab):
        with pytest.raises(V.EncodingError, match="'ß'"):
            V.encode(small_vocab, "straße")

    def test_sentinel_and_sep_markers(self, small_vocab):
        assert V.encode(small_vocab, "<extra_id_0>") == [V.sentinel_id(0)]
        assert V.encode(small_vocab, "<extra_id_99>") == [V.sentinel_id(99)]
        assert V.encode(small_vocab, "[S]") == [V.SEP_ID]

    def test_no_plain_text_hits_a_special_id(self, small_vocab):
        for text in ["mask", "extra", "s", "bos eos"]:
            for idx in V.encode(small_vocab, text):
                assert idx >= V.N_SPECIALS

    def test_pure_function(self, small_vocab):
        assert V.encode(small_vocab, "a b a") == V.encode(small_vocab, "a b a")


class TestDecode:
    def test_empty(self, small_vocab):
        assert V.decode(small_vocab, []) == ""

    def test_eos_truncates(self, small_vocab):
        ids = V.encode(small_vocab, "a b") + [V.EOS_ID] + V.encode(small_vocab, "cat")
        assert V.decode(small_vocab, ids) == "a b"

    def test_pad_and_bos_dropped(self, small_vocab):
        ids = [V.BOS_ID, V.PAD_ID] + V.encode(small_vocab, "cat") + [V.PAD_ID]
        assert V.decode(small_vocab, ids) == "cat"

    def test_out_of_range_id(self, small_vocab):
        with pytest.raises(IndexError):
            V.decode(small_vocab, [len(small_vocab)])

    def test_punctuation_attaches_left(self, small_vocab):
        s = "Answer: <mask>. Context: x is y."
        assert V.decode(small_vocab, V.encode(small_vocab, s)) == s

    def test_whitespace_normalization(self, small_vocab):
        ids = V.encode(small_vocab, "x is y .")
        assert V.decode(small_vocab, ids) == "x is y."


class TestSerialization:
    def test_round_trip_file(self, small_vocab, tmp_path):
        path = tmp_path / "vocab.txt"
        V.save_vocab(small_vocab, path)
        loaded = V.load_vocab(path)
        assert loaded.id_to_token == small_vocab.id_to_token
        assert path.read_text(encoding="utf-8").splitlines()[0] == V.PAD_TOKEN

    def test_corpus_round_trip_property(self):
        corpus = ["the cat sat on the mat .", "who is x ?", "x is y ."]
        v = V.build_vocab(corpus, max_size=512)
        for text in corpus:
            decoded = V.decode(v, V.encode(v, text))
            assert decoded.split() == [
                w for w in text.replace(" .", ".").replace(" ?", "?").split()
            ]
