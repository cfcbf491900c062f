from __future__ import annotations

from dataclasses import dataclass

BLANK = "<b>"


@dataclass(frozen=True)
class Vocabulary:
    """Character vocabulary; the blank symbol is never part of a transcript."""

    tokens: tuple[str, ...]
    blank_id: int = 0

    @classmethod
    def characters(cls, alphabet: str = "abcdefghijklmnopqrstuvwxyz' ") -> "Vocabulary":
        return cls((BLANK,) + tuple(alphabet), 0)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        index = {t: i for i, t in enumerate(self.tokens)}
        try:
            return [index[c] for c in text]
        except KeyError as err:
            raise ValueError(f"character {err.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.tokens[i] for i in ids if i != self.blank_id)
