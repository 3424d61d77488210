"""Key-prompt memory in slow motion: tokenize, retrieve, weight, blend.

Shows how an image feature turns into a per-image prompt bias: the key-map
projects the feature, cosine similarities rank every stored key, the top-K
survivors get softmax weights, and the weighted prompt matrices become the
bias added to every class embedding.
"""

import numpy as np

from iosf.autograd import Tensor
from iosf.encoders import TextEncoder, tokenize_embed
from iosf.promptmem import (
    ClassTokenBank, KeyMap, PromptMemory, init_key_prompt_pairs,
    make_bias, pair_similarities, prompt_weights, topk_2d,
)

dim, ctx_len, seed = 16, 8, 42
rng = np.random.default_rng(seed)

bank = ClassTokenBank(ctx_len, dim, seed)
bank.add_session(1, [(0, "heron"), (1, "otter"), (2, "viper")])
bank.add_session(2, [(3, "raven"), (4, "stoat")])

emb = bank.sessions[1][0].embedding
print(f'"a photo of a heron" -> {emb.valid_len} valid rows of {ctx_len}')

encoder = TextEncoder(dim, ctx_len, seed)
memory = PromptMemory()
memory.add_session(1, init_key_prompt_pairs(1, 4, bank, encoder, rng))
memory.add_session(2, init_key_prompt_pairs(2, 2, bank, encoder, rng))
print(f"memory pool: {memory.pool_size(2)} key-prompt pairs over 2 sessions")

keymap = KeyMap("FC1", dim, seed)
feature = rng.normal(size=dim)
key = keymap.apply_value(feature)

sims = pair_similarities(key, memory, through_session=2)
print("similarities per session:", [[f"{s:+.3f}" for s in row] for row in sims])

selection = topk_2d(sims, k=3)
for entry in selection.entries:
    print(f"  selected session {entry.session} pair {entry.index} (sim {entry.similarity:+.3f})")

weights = prompt_weights(selection, Tensor(key), memory)
print("softmax weights:", [f"{w:.3f}" for w in weights.data], f"(sum {weights.data.sum():.9f})")

bias = make_bias(selection, weights, memory)
print(f"bias matrix: {bias.matrix.data.shape}, norm {np.linalg.norm(bias.matrix.data):.3f}")

# the bias shifts every class embedding before encoding
shifted = encoder.encode_value(bias.matrix.data + emb.matrix.data)
plain = encoder.encode_value(emb.matrix.data)
print(f"classifier moved by {np.linalg.norm(shifted - plain):.4f} under the image bias")
