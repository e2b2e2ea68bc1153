"""The two self-supervised corruption styles, side by side.

Denoising masks spans with one shared mask token and reconstructs the whole
sequence; span infill gives each span its own sentinel and generates only
the missing pieces.
"""

import numpy as np

from qalign import corruption as C
from qalign import vocab as V

vocab = V.build_vocab(["the quick brown fox jumps over the lazy dog ."],
                      max_size=512)
ids = V.encode(vocab, "the quick brown fox jumps over the lazy dog .")
show = lambda seq: V.decode(vocab, [t for t in seq if t != V.EOS_ID]) or "<eos only>"

print("original      :", show(ids))

bart = C.corrupt_bart(ids, spans=[(1, 2), (6, 1)])
print("\ndenoising input :", show(bart.corrupted_ids))
print("denoising target:", show(bart.target_ids), "(the original)")

t5 = C.corrupt_t5(ids, spans=[(1, 2), (6, 1)])
print("\nspan-infill input :", show(t5.corrupted_ids))
print("span-infill target:", show(t5.target_ids))

# both corruptions are lossless: the original is recoverable
assert C.reconstruct_original(bart) == ids
assert C.reconstruct_original(t5) == ids
print("\nlossless reconstruction holds for both styles")

# sampled spans hit the requested token budget on average
rng = np.random.default_rng(0)
masked = total = 0
for _ in range(2000):
    sample = C.corrupt_t5(ids * 4, corruption_rate=0.15, rng=rng)
    masked += sum(l for _, l in sample.masked_spans)
    total += len(ids) * 4
print(f"measured mask rate over 2000 samples: {masked / total:.3f} (target 0.15)")
