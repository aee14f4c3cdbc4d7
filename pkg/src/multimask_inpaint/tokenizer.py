"""Word-level tokenizer with character offset mapping.

Serves as the in-tree text-tokenization provider for the toy backbones and
for span bookkeeping. Color tags like ``<blue>`` stay atomic so tagged
answers survive a decode/encode round trip.
"""

import re
from dataclasses import dataclass

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIAL_TOKENS = [PAD, BOS, EOS, UNK]
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"</?[a-z]+>|\w+|[^\w\s]")


@dataclass
class Encoded:
    ids: list[int]
    tokens: list[str]
    offsets: list[tuple[int, int] | None]  # None on special/pad positions
    special_positions: list[int]

    def __len__(self) -> int:
        return len(self.ids)


class WordTokenizer:
    """Lowercasing word/punctuation tokenizer with a fixed vocabulary."""

    def __init__(self, vocab: dict[str, int] | None = None):
        self.vocab = dict(vocab) if vocab else {t: i for i, t in enumerate(SPECIAL_TOKENS)}
        for i, t in enumerate(SPECIAL_TOKENS):
            if self.vocab.get(t) != i:
                raise ValueError(f"special token {t!r} must have id {i}")
        self.inv_vocab = {i: t for t, i in self.vocab.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @classmethod
    def fit(cls, texts: list[str], extra_tokens: list[str] | None = None) -> "WordTokenizer":
        """Build a vocabulary from a corpus (plus any tokens that must exist)."""
        tok = cls()
        for text in list(texts) + list(extra_tokens or []):
            for w, _ in tok.split(text):
                if w not in tok.vocab:
                    tok.vocab[w] = len(tok.vocab)
        tok.inv_vocab = {i: t for t, i in tok.vocab.items()}
        return tok

    def split(self, text: str) -> list[tuple[str, tuple[int, int]]]:
        """Tokens with (start, end) character offsets into the original text."""
        return [(m.group(0).lower(), (m.start(), m.end())) for m in _TOKEN_RE.finditer(text)]

    def token_id(self, token: str) -> int:
        return self.vocab.get(token, UNK_ID)

    def encode(self, text: str, max_len: int | None = None, pad_to: int | None = None) -> Encoded:
        """<s> tokens </s> [<pad>...]; truncated so the total never exceeds max_len."""
        pieces = self.split(text)
        if max_len is not None:
            pieces = pieces[:max(0, max_len - 2)]
        tokens = [BOS] + [w for w, _ in pieces] + [EOS]
        offsets: list[tuple[int, int] | None] = [None] + [o for _, o in pieces] + [None]
        specials = [0, len(tokens) - 1]
        target = pad_to if pad_to is not None else (max_len if max_len is not None else len(tokens))
        while len(tokens) < target:
            specials.append(len(tokens))
            tokens.append(PAD)
            offsets.append(None)
        ids = [self.token_id(t) for t in tokens]
        return Encoded(ids=ids, tokens=tokens, offsets=offsets, special_positions=specials)

    def decode(self, ids: list[int]) -> str:
        words = []
        for i in ids:
            t = self.inv_vocab.get(int(i), UNK)
            if t in (PAD, BOS, EOS):
                continue
            words.append(t)
        return " ".join(words)

    def save(self, path) -> None:
        import json
        from pathlib import Path

        Path(path).write_text(json.dumps(self.vocab))

    @classmethod
    def load(cls, path) -> "WordTokenizer":
        import json
        from pathlib import Path

        return cls(vocab=json.loads(Path(path).read_text()))
