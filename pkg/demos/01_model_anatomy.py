# # Where the parameters live
#
# A line image goes through five 3x3 conv layers, three 2x2 pools, a
# column-wise collapse, five bidirectional LSTMs and one dense layer that
# scores every alphabet character plus the CTC blank.

import numpy as np

from htr_transfer import ModelConfig, build_model, count_parameters, forward, swap_head
from htr_transfer.model import parameter_shapes
from htr_transfer.tensor import make_rng

cfg = ModelConfig.paper(alphabet_size=79)
print("total parameters:", count_parameters(cfg))

# Per layer breakdown. Most of the budget sits in the recurrent stack.

per_layer = {}
for name, shape in parameter_shapes(cfg).items():
    layer = name.split(".")[0]
    per_layer[layer] = per_layer.get(layer, 0) + int(np.prod(shape))
for layer, n in per_layer.items():
    print(f"{layer:7s} {n:>9,d}")

# ## Shapes through the network
#
# A 128 pixel tall line, 400 pixels wide, leaves the conv stack as 50
# columns of 16 x 80 features, i.e. 50 frames of 1280 features each.

model = build_model(cfg, make_rng(0, "init"), [chr(33 + i) for i in range(79)])
image = np.random.default_rng(0).random((1, 400, 128))
log_probs, lengths = forward(model, image)
print("log-prob shape:", log_probs.shape, "frames:", lengths[0])

# ## Swapping the output layer
#
# Moving to a new alphabet only replaces the dense head; everything below
# it is copied verbatim.

for size in (83, 96):
    swapped = swap_head(model, [chr(33 + i) for i in range(size)], make_rng(0, "head"))
    print(f"{size} characters: {swapped.num_parameters:,d} "
          f"({swapped.num_parameters - model.num_parameters:+d})")
