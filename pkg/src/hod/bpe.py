"""Character-level byte-pair-encoding tokenizer.

Training greedily merges the most frequent adjacent symbol pair; ties
break to the lexicographically smallest pair, so the learned merge list
does not depend on corpus iteration order. Encoding applies the merges
in training order and decoding concatenates token strings, which makes
the round trip exact for any text over the training alphabet.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


@dataclass
class BpeTokenizer:
    vocab: list[str]
    merges: list[tuple[str, str]]
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.token_to_id:
            self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _symbols(self, text: str) -> list[str]:
        known = self.token_to_id
        return [ch if ch in known else UNK_TOKEN for ch in text]

    def encode(self, text: str) -> list[int]:
        """Tokenize text; characters outside the alphabet map to the UNK token."""
        symbols = self._symbols(text)
        for a, b in self.merges:
            merged = a + b
            i = 0
            out = []
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        return [self.token_to_id[s] for s in symbols]

    def decode(self, ids: list[int]) -> str:
        """Invert encode exactly; special tokens (pad/bos/eos/unk) are dropped."""
        specials = {self.token_to_id[t] for t in SPECIAL_TOKENS}
        pieces = []
        for i in ids:
            if i in specials:
                continue
            if not 0 <= i < len(self.vocab):
                raise DataError(f"token id {i} outside vocabulary of size {len(self.vocab)}")
            pieces.append(self.vocab[i])
        return "".join(pieces)

    def to_json(self) -> dict:
        alphabet = self.vocab[len(SPECIAL_TOKENS) : len(self.vocab) - len(self.merges)]
        return {"alphabet": alphabet, "merges": [list(m) for m in self.merges]}

    @classmethod
    def from_json(cls, obj: dict) -> "BpeTokenizer":
        alphabet = list(obj["alphabet"])
        merges = [tuple(m) for m in obj["merges"]]
        vocab = list(SPECIAL_TOKENS) + alphabet
        for a, b in merges:
            vocab.append(a + b)
        return cls(vocab=vocab, merges=merges)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "BpeTokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def bpe_train(corpus: list[str], n_merges: int) -> BpeTokenizer:
    """Learn a tokenizer from a corpus of independent strings.

    Stops early if the corpus runs out of mergeable pairs before
    ``n_merges`` merges have been learned.
    """
    if not corpus or all(not s for s in corpus):
        raise DataError("cannot train a tokenizer on an empty corpus")
    if n_merges < 0:
        raise DataError(f"n_merges must be >= 0, got {n_merges}")

    alphabet = sorted({ch for text in corpus for ch in text})
    # Identical strings collapse to one weighted sequence.
    sequences = Counter(tuple(text) for text in corpus if text)

    merges: list[tuple[str, str]] = []
    for _ in range(n_merges):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for seq, weight in sequences.items():
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] += weight
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        new_sequences: Counter[tuple[str, ...]] = Counter()
        for seq, weight in sequences.items():
            out = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == best[0] and seq[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            new_sequences[tuple(out)] += weight
        sequences = new_sequences

    vocab = list(SPECIAL_TOKENS) + alphabet + [a + b for a, b in merges]
    return BpeTokenizer(vocab=vocab, merges=merges)
