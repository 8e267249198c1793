"""CNN-BLSTM-CTC handwriting line recognition with layer-freezing transfer learning."""
from .checkpoint import load_checkpoint, save_checkpoint
from .ctc import ctc_bruteforce, ctc_forward_backward, greedy_decode
from .data import Alphabet, Sample, build_alphabet, load_manifest, make_batches, preprocess
from .freeze import FreezeSpec, parse_freeze_spec
from .metrics import cer, edit_distance, report_table
from .model import Model, ModelConfig, build_model, count_parameters, forward, swap_head, train_step
from .optim import AdamState, adam_init, adam_step

__version__ = "0.1.0"
