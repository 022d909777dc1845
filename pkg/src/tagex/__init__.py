"""tagex: open attribute-value extraction by sequence tagging.

Library surface:

  autodiff    reverse-mode autodiff tensors, optimizer, param archives
  embeddings  vocabulary + trainable embedding table
  recurrent   LSTM cell and bidirectional encoder
  attention   pairwise self-attention and heatmap export
  crf         linear-chain CRF inference and learning
  schemes     BIOE/UBIOE/IOB codecs and full-credit evaluation
  corpus      corpus IO, tokenizer, splits, synthetic generator
  trainer     model variants, training loop, checkpoints
  active      pool-based active learning (tag flips, least confidence)
  cli         command-line entry points
  service     HTTP annotation service
"""

from . import (active, attention, autodiff, corpus, crf, embeddings,
               recurrent, schemes, trainer)

__all__ = ["active", "attention", "autodiff", "corpus", "crf", "embeddings",
           "recurrent", "schemes", "trainer"]

__version__ = "0.1.0"
