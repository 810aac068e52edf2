"""Tokenizer behavior: training determinism, framing invariants, round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilip import bpe
from bilip.bpe import (BASE_VOCAB, EOS_ID, PAD_ID, SOS_ID, TokenSequence,
                       TokenizerError, Vocabulary, decode, encode, train_bpe)


def _mixed_corpus():
    latin = ["the cat sat on the mat", "a quick brown fox", "hello there world",
             "byte pairs merge greedily", "lower case only text"]
    hangul = ["안녕하세요 세계", "고양이가 매트 위에 앉았다", "빠른 갈색 여우",
              "바이트 쌍 병합", "소문자 텍스트"]
    return latin + hangul


class TestTraining:
    def test_first_merge_is_most_frequent_pair(self):
        # "aaab" twice: pair (a,a) occurs four times, (a,b) twice
        vocab = train_bpe(["aaab", "aaab"], target_vocab=BASE_VOCAB + 1)
        a = 3 + ord("a")
        assert vocab.merges == [(a, a)]

    def test_empty_corpus_rejected(self):
        with pytest.raises(TokenizerError):
            train_bpe([], target_vocab=BASE_VOCAB + 10)

    def test_target_vocab_too_small_rejected(self):
        with pytest.raises(TokenizerError):
            train_bpe(["abc"], target_vocab=BASE_VOCAB)

    def test_mixed_scripts_train_without_failure(self):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 50)
        assert vocab.vocab_size > BASE_VOCAB
        # both scripts encode and round-trip through the byte-level base
        for text in ("hangul 한글 and latin", "조각"):
            assert decode(encode(text, vocab, 76), vocab) == text.lower()

    def test_training_is_deterministic(self):
        corpus = _mixed_corpus()
        v1 = train_bpe(corpus, target_vocab=BASE_VOCAB + 40)
        v2 = train_bpe(corpus, target_vocab=BASE_VOCAB + 40)
        assert v1.merges == v2.merges

    def test_lowercasing_applied_before_counting(self):
        v_upper = train_bpe(["AAAB", "AAAB"], target_vocab=BASE_VOCAB + 1)
        v_lower = train_bpe(["aaab", "aaab"], target_vocab=BASE_VOCAB + 1)
        assert v_upper.merges == v_lower.merges

    def test_language_weights_shift_merges(self):
        # upweighting the second text makes its pair win
        corpus = ["xxxy", "zzzw"]
        v = train_bpe(corpus, target_vocab=BASE_VOCAB + 1, weights=[1, 5])
        z = 3 + ord("z")
        assert v.merges == [(z, z)]


class TestFraming:
    def test_empty_text(self):
        vocab = train_bpe(["ab"], target_vocab=BASE_VOCAB + 1)
        seq = encode("", vocab, max_len=6)
        assert seq.ids[0] == SOS_ID
        assert seq.ids[1] == EOS_ID
        assert (seq.ids[2:] == PAD_ID).all()
        assert decode(seq, vocab) == ""

    def test_truncation_keeps_eos_in_last_slot(self):
        vocab = train_bpe(["ab"], target_vocab=BASE_VOCAB + 1)
        seq = encode("q" * 100, vocab, max_len=10)
        assert seq.eos_position == 9
        assert seq.ids[0] == SOS_ID
        assert (seq.ids[1:9] != PAD_ID).all()

    def test_exact_fit_boundary(self):
        vocab = train_bpe(["ab"], target_vocab=BASE_VOCAB + 1)
        seq = encode("q" * 8, vocab, max_len=10)  # exactly max_len - 2 tokens
        assert seq.eos_position == 9

    def test_malformed_sequences_rejected(self):
        with pytest.raises(TokenizerError):
            TokenSequence(ids=np.array([SOS_ID, 50, PAD_ID, PAD_ID]), eos_position=2)
        with pytest.raises(TokenizerError):
            TokenSequence(ids=np.array([50, EOS_ID, PAD_ID]), eos_position=1)
        with pytest.raises(TokenizerError):
            TokenSequence(ids=np.array([SOS_ID, EOS_ID, 50]), eos_position=1)

    def test_decode_rejects_out_of_range_id(self):
        vocab = train_bpe(["ab"], target_vocab=BASE_VOCAB + 1)
        seq = encode("ab", vocab, max_len=6)
        seq.ids[1] = vocab.vocab_size + 7
        with pytest.raises(TokenizerError):
            decode(seq, vocab)


class TestRoundTrip:
    def test_bilingual_sample(self):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 60)
        for text in _mixed_corpus():
            assert decode(encode(text, vocab, 76), vocab) == text.lower()

    def test_hello_hangul(self):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 30)
        text = "hello 안녕"
        assert decode(encode(text, vocab, 76), vocab) == text

    @settings(max_examples=60, deadline=None)
    @given(st.text(alphabet=st.characters(codec="utf-8",
                                          exclude_categories=("Cs", "Cc")),
                   max_size=20))
    def test_roundtrip_any_unicode(self, text):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 20)
        seq = encode(text, vocab, max_len=96)
        if seq.eos_position - 1 < len(text.lower().encode("utf-8")):
            return  # truncated: round-trip not expected
        assert decode(seq, vocab) == text.lower()


class TestPrefixStability:
    def test_concatenation_without_boundary_merges(self):
        # '|' never appears in the corpus, so no merge can span it
        corpus = ["alpha beta gamma", "beta gamma delta", "gamma delta alpha"]
        vocab = train_bpe(corpus, target_vocab=BASE_VOCAB + 30)
        s, t = "alpha beta", "gamma delta"
        joined = encode(s + "|" + t, vocab, max_len=76)
        left = encode(s + "|", vocab, max_len=76)
        prefix = left.ids[1:left.eos_position]
        np.testing.assert_array_equal(
            joined.ids[1:1 + prefix.size], prefix)


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 40)
        path = tmp_path / "vocab.json"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.merges == vocab.merges
        assert loaded.vocab_size == vocab.vocab_size
        loaded.save(tmp_path / "vocab2.json")
        assert (tmp_path / "vocab.json").read_bytes() == (tmp_path / "vocab2.json").read_bytes()

    def test_specials_never_produced_by_merges(self):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 40)
        for left, right in vocab.merges:
            assert left >= bpe.NUM_SPECIALS
            assert right >= bpe.NUM_SPECIALS

    def test_token_id_bijection(self):
        vocab = train_bpe(_mixed_corpus(), target_vocab=BASE_VOCAB + 40)
        seen = set()
        for token_id in range(bpe.NUM_SPECIALS, vocab.vocab_size):
            b = vocab.token_bytes(token_id)
            assert b not in seen
            seen.add(b)
            assert vocab.token_to_id[b] == token_id
