"""Vocabulary construction, special tokens, and the encode/decode round trip."""

from qalign import vocab as V

corpus = [
    "the cat sat on the mat .",
    "who owns the cat ?",
    "Question: who owns the cat Answer: <mask>. Context: the cat sat .",
]
vocab = V.build_vocab(corpus, max_size=512)
print(f"vocabulary size: {len(vocab)} "
      f"({V.N_SPECIALS} specials + fallback alphabet + words)")

# specials sit at fixed ids and round-trip through their literal markers
print("mask id:", V.MASK_ID, "->", vocab.id_to_token[V.MASK_ID])
print("sentinel 3:", V.sentinel_id(3), "->", vocab.id_to_token[V.sentinel_id(3)])

text = "Question: who owns the cat Answer: <mask>. Context: the cat sat ."
ids = V.encode(vocab, text)
print("encoded:", ids)
print("decoded:", V.decode(vocab, ids))

# unknown words decompose into characters instead of failing
print("fallback for 'zebra':", V.encode(vocab, "zebra"))

# one token per line, line number = id
V.save_vocab(vocab, "/tmp/demo_vocab.txt")
print("first lines of the saved file:",
      open("/tmp/demo_vocab.txt").read().splitlines()[:6])
