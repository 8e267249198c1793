# # Transfer between two synthetic handwriting styles
#
# The source corpus is upright anti-aliased writing over a-s; the target is
# slanted, thick, binarized writing over f-z. We pretrain on the source,
# then compare three ways of spending the same small budget on the target.
# Budgets here are shortened so the script finishes in a few minutes; the
# acceptance suite uses longer ones.

import os
import tempfile

from htr_transfer.harness import RunConfig, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_synth

work = tempfile.mkdtemp(prefix="transfer_demo_")
corpus = os.path.join(work, "corpus")
cmd_synth(RunConfig(out_dir=corpus, seed=7, source_lines=1000, target_lines=100))
print("corpus written to", corpus)

src, tgt = os.path.join(corpus, "source"), os.path.join(corpus, "target")
cmd_pretrain(RunConfig(train_manifest=f"{src}/train.tsv", valid_manifest=f"{src}/valid.tsv",
                       out_dir=os.path.join(work, "source"), profile="reduced", epochs=15, eval_train=False))
source_ckpt = os.path.join(work, "source", "best.ckpt")

# ## How badly does the source model read the target?
#
# Characters t-z are not in its alphabet at all, so they count as errors.

naive = cmd_evaluate(RunConfig(checkpoint=source_ckpt, valid_manifest=f"{tgt}/valid.tsv", allow_unknown=True,
                               out_dir=os.path.join(work, "naive")))

# ## Same budget, three starting points

common = dict(train_manifest=f"{tgt}/train.tsv", valid_manifest=f"{tgt}/valid.tsv", profile="reduced",
              epochs=25, eval_train=False)
runs = {
    "no adaptation": naive,
    "from scratch": cmd_pretrain(RunConfig(out_dir=os.path.join(work, "scratch"), **common)),
    "fine-tune all": cmd_finetune(RunConfig(out_dir=os.path.join(work, "all"), source_checkpoint=source_ckpt,
                                            **common)),
    "output layer only": cmd_finetune(RunConfig(out_dir=os.path.join(work, "fc"), source_checkpoint=source_ckpt,
                                                freeze="FC", **common)),
}
for name, rep in runs.items():
    print(f"{name:18s} valid CER {100 * rep.splits['valid'].cer:5.1f}%")

# Every run directory holds config.txt, curve.csv, report.csv and the
# checkpoints, so any row above can be re-evaluated later with
# `htr-transfer evaluate --checkpoint <dir>/best.ckpt ...`.
