"""Character and token vocabularies with reserved indices.

Index 0 is always padding and index 1 the unknown symbol; token vocabularies
additionally reserve index 2 for the mask token. Non-reserved entries are
assigned in sorted order, so vocabularies are independent of corpus file
order.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import VocabularyError

PAD_INDEX = 0
UNK_INDEX = 1
MASK_INDEX = 2

PAD_SYMBOL = "<pad>"
UNK_SYMBOL = "<unk>"
MASK_SYMBOL = "<mask>"


class CharVocabulary:
    """Bijective map between corpus characters and dense indices."""

    reserved = (PAD_SYMBOL, UNK_SYMBOL)

    def __init__(self, chars: Iterable[str]):
        symbols = sorted(set(chars) - set(self.reserved))
        self._index = {s: i + len(self.reserved) for i, s in enumerate(symbols)}
        self._symbol = list(self.reserved) + symbols

    def __len__(self) -> int:
        return len(self._symbol)

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def index_of(self, char: str) -> int:
        return self._index.get(char, UNK_INDEX)

    def symbol_of(self, index: int) -> str:
        if not 0 <= index < len(self._symbol):
            raise VocabularyError(f"char index {index} outside vocabulary of size {len(self)}")
        return self._symbol[index]

    def encode(self, text: str, max_len: int | None = None) -> list[int]:
        ids = [self.index_of(c) for c in text]
        return ids[:max_len] if max_len is not None else ids

    def to_state(self) -> dict:
        return {"kind": "char", "symbols": self._symbol[len(self.reserved):]}

    @classmethod
    def from_state(cls, state: dict) -> "CharVocabulary":
        return cls(state["symbols"])


class TokenVocabulary:
    """Token-to-index map; the mask index is never produced from raw text."""

    reserved = (PAD_SYMBOL, UNK_SYMBOL, MASK_SYMBOL)

    def __init__(self, tokens: Iterable[str]):
        symbols = sorted(set(tokens) - set(self.reserved))
        self._index = {s: i + len(self.reserved) for i, s in enumerate(symbols)}
        self._symbol = list(self.reserved) + symbols

    def __len__(self) -> int:
        return len(self._symbol)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index_of(self, token: str) -> int:
        return self._index.get(token, UNK_INDEX)

    def symbol_of(self, index: int) -> str:
        if not 0 <= index < len(self._symbol):
            raise VocabularyError(f"token index {index} outside vocabulary of size {len(self)}")
        return self._symbol[index]

    def encode(self, tokens: Sequence[str], max_len: int | None = None) -> list[int]:
        ids = [self.index_of(t) for t in tokens]
        return ids[:max_len] if max_len is not None else ids

    def to_state(self) -> dict:
        return {"kind": "token", "symbols": self._symbol[len(self.reserved):]}

    @classmethod
    def from_state(cls, state: dict) -> "TokenVocabulary":
        return cls(state["symbols"])
