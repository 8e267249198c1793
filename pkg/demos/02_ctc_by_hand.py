# # CTC on a toy problem
#
# Two classes: the letter "a" (index 0) and the blank (index 1). With
# uniform outputs every frame path is equally likely, so the loss is just
# the log of how many paths collapse to the target.

import itertools
import math

import numpy as np

from htr_transfer import ctc_bruteforce, ctc_forward_backward, greedy_decode
from htr_transfer.ctc import collapse_path

for frames in (1, 2, 3):
    paths = [p for p in itertools.product([0, 1], repeat=frames) if collapse_path(p, 1) == [0]]
    loss, _ = ctc_forward_backward(np.zeros((frames, 2)), [0])
    print(f"T={frames}: {len(paths)} of {2 ** frames} paths give 'a', "
          f"loss {loss:.6f} = -log({len(paths)}/{2 ** frames}) = {-math.log(len(paths) / 2 ** frames):.6f}")

# ## Dynamic programming against enumeration
#
# The forward-backward recursion never enumerates paths; the brute force
# does, so agreement on random problems is a strong check.

rng = np.random.default_rng(0)
logits = rng.normal(size=(6, 4))
probs = np.exp(logits - logits.max(1, keepdims=True))
probs /= probs.sum(1, keepdims=True)
dp, grad = ctc_forward_backward(logits, [0, 2, 2])
print("dp", dp, "brute force", ctc_bruteforce(probs, [0, 2, 2]))

# The gradient with respect to the logits is softmax minus the expected
# label occupancy, so each row sums to zero.
print("row sums of the gradient:", np.round(grad.sum(1), 12))

# ## Greedy decoding
#
# Take the best class per frame, merge repeats, drop blanks.

print(greedy_decode(logits))
