"""Lower-cased byte-level BPE tokenizer with [SOS]/[EOS]/[PAD] framing.

The base alphabet is the 256 byte values, so any UTF-8 text (Latin, Hangul,
anything else) is encodable without an unknown token. Ids are laid out as:

    0, 1, 2        [SOS], [EOS], [PAD]
    3 .. 258       the 256 raw byte values
    259 ..         merge products, in training acquisition order

Merges are resolved greedily in training order, replacing occurrences left to
right, which makes both training and encoding deterministic for a fixed
corpus order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

SOS_ID = 0
EOS_ID = 1
PAD_ID = 2
NUM_SPECIALS = 3
BASE_VOCAB = NUM_SPECIALS + 256  # specials + raw bytes

DEFAULT_MAX_LEN = 76

SPECIAL_NAMES = {"[SOS]": SOS_ID, "[EOS]": EOS_ID, "[PAD]": PAD_ID}

FORMAT_VERSION = 1


class TokenizerError(ValueError):
    pass


@dataclass
class Vocabulary:
    """Ordered merge table plus the derived token <-> id bijection."""

    merges: list[tuple[int, int]]
    _bytes_of: list[bytes] = field(default_factory=list, repr=False)
    token_to_id: dict[bytes, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._bytes_of:
            self._bytes_of = [b"", b"", b""]  # specials have no byte expansion
            self._bytes_of += [bytes([i]) for i in range(256)]
            for left, right in self.merges:
                self._bytes_of.append(self._bytes_of[left] + self._bytes_of[right])
            self.token_to_id = {
                self._bytes_of[i]: i for i in range(NUM_SPECIALS, len(self._bytes_of))
            }
            if len(self.token_to_id) != len(self._bytes_of) - NUM_SPECIALS:
                raise TokenizerError("merge table produces duplicate tokens")

    @property
    def vocab_size(self) -> int:
        return BASE_VOCAB + len(self.merges)

    def token_bytes(self, token_id: int) -> bytes:
        if not NUM_SPECIALS <= token_id < self.vocab_size:
            raise TokenizerError(f"token id {token_id} out of range")
        return self._bytes_of[token_id]

    def save(self, path) -> None:
        doc = {
            "format_version": FORMAT_VERSION,
            "merges": [list(pair) for pair in self.merges],
            "specials": SPECIAL_NAMES,
            "vocab_size": self.vocab_size,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format_version") != FORMAT_VERSION:
            raise TokenizerError(f"unsupported vocabulary format: {doc.get('format_version')}")
        if doc.get("specials") != SPECIAL_NAMES:
            raise TokenizerError("special token layout mismatch")
        vocab = cls(merges=[tuple(pair) for pair in doc["merges"]])
        if vocab.vocab_size != doc.get("vocab_size"):
            raise TokenizerError("declared vocab_size inconsistent with merge table")
        return vocab


@dataclass
class TokenSequence:
    """Fixed-width id sequence: [SOS], content, [EOS], then [PAD] fill."""

    ids: np.ndarray
    eos_position: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise TokenizerError("token sequence must be one-dimensional")
        self.validate()

    @property
    def max_len(self) -> int:
        return int(self.ids.shape[0])

    def validate(self) -> None:
        ids = self.ids
        if ids[0] != SOS_ID:
            raise TokenizerError("sequence must start with [SOS]")
        eos_hits = np.flatnonzero(ids == EOS_ID)
        if eos_hits.size != 1:
            raise TokenizerError("sequence must contain exactly one [EOS]")
        if int(eos_hits[0]) != self.eos_position:
            raise TokenizerError("eos_position does not match the [EOS] location")
        if self.eos_position > len(ids) - 1:
            raise TokenizerError("[EOS] past the end of the sequence")
        if not (ids[self.eos_position + 1:] == PAD_ID).all():
            raise TokenizerError("non-[PAD] content after [EOS]")
        if (ids[1:self.eos_position] < NUM_SPECIALS).any():
            raise TokenizerError("special id inside content span")


def _merge_pair(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    """Replace non-overlapping occurrences of ``pair`` left to right."""
    left, right = pair
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_bpe(corpus, target_vocab: int, weights=None) -> Vocabulary:
    """Learn a merge table by greedy most-frequent-pair merging.

    ``corpus`` is an iterable of texts (lower-cased before counting);
    ``weights`` optionally repeats each text that many times in the counts,
    which lets a small corpus mirror a larger per-language mixture ratio.
    Ties on frequency go to the lexicographically smallest pair of token byte
    strings. Training stops early when no pair occurs at least twice.
    """
    texts = list(corpus)
    if not texts:
        raise TokenizerError("empty corpus")
    if target_vocab <= BASE_VOCAB:
        raise TokenizerError(
            f"target_vocab must exceed the byte alphabet plus specials ({BASE_VOCAB})"
        )
    if weights is None:
        weights = [1] * len(texts)
    else:
        weights = [int(w) for w in weights]
        if len(weights) != len(texts):
            raise TokenizerError("weights length must match corpus length")

    # collapse identical sequences; weights add up
    seq_counts: Counter = Counter()
    for text, w in zip(texts, weights):
        if w <= 0:
            continue
        seq = tuple(NUM_SPECIALS + b for b in text.lower().encode("utf-8"))
        if seq:
            seq_counts[seq] += w
    if not seq_counts:
        raise TokenizerError("corpus contains no encodable text")

    seqs = [list(seq) for seq in seq_counts]
    counts = list(seq_counts.values())

    bytes_of = [b"", b"", b""] + [bytes([i]) for i in range(256)]
    known_tokens = set(bytes_of[NUM_SPECIALS:])

    pair_counts: Counter = Counter()
    pair_seqs: dict[tuple[int, int], set[int]] = {}
    for si, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += counts[si]
            pair_seqs.setdefault(pair, set()).add(si)

    merges: list[tuple[int, int]] = []
    while BASE_VOCAB + len(merges) < target_vocab:
        best = None
        best_count = 1  # require at least two occurrences
        for pair, cnt in pair_counts.items():
            if cnt < best_count:
                continue
            if bytes_of[pair[0]] + bytes_of[pair[1]] in known_tokens:
                continue  # would duplicate an existing token's byte string
            if cnt > best_count:
                best, best_count = pair, cnt
            elif best is not None and (bytes_of[pair[0]], bytes_of[pair[1]]) < (
                bytes_of[best[0]], bytes_of[best[1]]
            ):
                best = pair
        if best is None:
            break
        new_id = len(bytes_of)
        new_bytes = bytes_of[best[0]] + bytes_of[best[1]]
        bytes_of.append(new_bytes)
        known_tokens.add(new_bytes)
        merges.append(best)

        affected = pair_seqs.pop(best, set())
        for si in affected:
            seq = seqs[si]
            w = counts[si]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= w
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                if pair in pair_seqs:
                    pair_seqs[pair].discard(si)
            new_seq = _merge_pair(seq, best, new_id)
            seqs[si] = new_seq
            for pair in zip(new_seq, new_seq[1:]):
                pair_counts[pair] += w
                pair_seqs.setdefault(pair, set()).add(si)

    return Vocabulary(merges=merges)


def _apply_merges(byte_ids: list[int], vocab: Vocabulary) -> list[int]:
    seq = byte_ids
    for rank, pair in enumerate(vocab.merges):
        present = set(seq)
        if pair[0] not in present or pair[1] not in present:
            continue
        seq = _merge_pair(seq, pair, BASE_VOCAB + rank)
    return seq


def encode(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """Lower-case, byte-encode, merge, frame, and pad to ``max_len`` slots.

    Content is truncated to ``max_len - 2`` tokens so [EOS] always fits at or
    before the final slot.
    """
    if max_len < 2:
        raise TokenizerError("max_len must leave room for [SOS] and [EOS]")
    byte_ids = [NUM_SPECIALS + b for b in text.lower().encode("utf-8")]
    content = _apply_merges(byte_ids, vocab)
    content = content[:max_len - 2]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = SOS_ID
    ids[1:1 + len(content)] = content
    eos_position = 1 + len(content)
    ids[eos_position] = EOS_ID
    return TokenSequence(ids=ids, eos_position=eos_position)


def decode(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Invert :func:`encode` up to lower-casing; specials are dropped and
    broken byte runs decode to the Unicode replacement character."""
    seq.validate()
    out = bytearray()
    for token_id in seq.ids[1:seq.eos_position]:
        out += vocab.token_bytes(int(token_id))
    return out.decode("utf-8", errors="replace")
