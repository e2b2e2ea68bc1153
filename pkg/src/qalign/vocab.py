"""Deterministic word-level tokenizer with character fallback.

Special tokens occupy fixed ids at the front of every vocabulary: padding,
sequence start/end, the single mask, the segment delimiter, and 100 sentinel
ids used by span-infill targets. Their literal markers ("<mask>",
"<extra_id_7>", "[S]", ...) round-trip through encode/decode; ordinary text
never produces a special id.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
MASK_TOKEN = "<mask>"
SEP_TOKEN = "[S]"
N_SENTINELS = 100

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
MASK_ID = 3
SEP_ID = 4
SENTINEL_0_ID = 5


def sentinel_token(k: int) -> str:
    if not 0 <= k < N_SENTINELS:
        raise ValueError(f"sentinel index {k} outside [0, {N_SENTINELS})")
    return f"<extra_id_{k}>"


def sentinel_id(k: int) -> int:
    if not 0 <= k < N_SENTINELS:
        raise ValueError(f"sentinel index {k} outside [0, {N_SENTINELS})")
    return SENTINEL_0_ID + k


SPECIAL_TOKENS = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, MASK_TOKEN, SEP_TOKEN] + [
    sentinel_token(k) for k in range(N_SENTINELS)
]
N_SPECIALS = len(SPECIAL_TOKENS)

# special markers first (atomic), then word chunks, then lone non-space chars
_TOKEN_RE = re.compile(
    r"(<pad>|<bos>|<eos>|<mask>|<extra_id_\d{1,2}>|\[S\])|(\w+)|(\S)"
)


class EncodingError(ValueError):
    """A character has no vocabulary entry, so the text cannot be encoded."""


def pretokenize(text: str) -> list[str]:
    """Split text into special markers, word chunks, and single punctuation."""
    return [m.group(0) for m in _TOKEN_RE.finditer(text)]


@dataclass
class Vocab:
    """Immutable token table; `id_to_token` is the exact inverse of `token_to_id`."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")
        if self.id_to_token[:N_SPECIALS] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)


_PRINTABLE_ASCII = [chr(c) for c in range(0x21, 0x7F)]  # fallback alphabet core


def build_vocab(corpus, max_size: int) -> Vocab:
    """Specials, then the fallback alphabet, then most-frequent words.

    The fallback alphabet is printable ASCII plus any other non-whitespace
    character of the corpus, so unknown words always decompose. Word order
    is deterministic given corpus order; frequency ties go to the
    lexicographically smaller token.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if max_size <= N_SPECIALS + 256:
        raise ValueError(
            f"max_size {max_size} too small; need more than {N_SPECIALS + 256}"
        )

    tokens = list(SPECIAL_TOKENS)
    taken = set(tokens)

    extra_chars = {ch for text in corpus for ch in text if not ch.isspace()}
    for ch in sorted(extra_chars.union(_PRINTABLE_ASCII)):
        if ch not in taken:
            tokens.append(ch)
            taken.add(ch)

    counts: Counter[str] = Counter()
    for text in corpus:
        for tok in pretokenize(text):
            if tok not in taken:
                counts[tok] += 1
    for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(tokens) >= max_size:
            break
        tokens.append(tok)

    return Vocab(tokens)


def encode(v: Vocab, text: str) -> list[int]:
    """Tokenize text to ids; unknown words decompose into character ids."""
    ids: list[int] = []
    for tok in pretokenize(text):
        idx = v.token_to_id.get(tok)
        if idx is not None:
            ids.append(idx)
            continue
        for ch in tok:
            ch_idx = v.token_to_id.get(ch)
            if ch_idx is None:
                raise EncodingError(f"character {ch!r} is not in the vocabulary")
            ids.append(ch_idx)
    return ids


_ATTACH_RE = re.compile(r"\w")


def decode(v: Vocab, ids) -> str:
    """Inverse of encode up to whitespace normalization.

    Padding and sequence-start ids are dropped; the first end-of-sequence id
    terminates the output. Single punctuation tokens attach to the previous
    token without a space.
    """
    parts: list[str] = []
    for idx in ids:
        idx = int(idx)
        if not 0 <= idx < len(v.id_to_token):
            raise IndexError(f"token id {idx} outside vocabulary of size {len(v)}")
        if idx in (PAD_ID, BOS_ID):
            continue
        if idx == EOS_ID:
            break
        tok = v.id_to_token[idx]
        if parts and len(tok) == 1 and not _ATTACH_RE.match(tok):
            parts[-1] += tok
        else:
            parts.append(tok)
    return " ".join(parts)


def save_vocab(v: Vocab, path) -> None:
    """One token per line; the line number is the id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in v.id_to_token:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().splitlines()
    return Vocab(tokens)
