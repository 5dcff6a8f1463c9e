"""Joint phonetic embeddings of spoken and written words.

The package learns a shared embedding space for spoken word segments
(frame matrices of acoustic features) and text words (subword-unit
sequences) from a small paired set plus unlabeled audio, and recognizes
words over a closed vocabulary by a nearest-embedding softmax fused with
an n-gram language model.

Submodules
----------
corpus      data model, file formats, normalization, synthetic corpora
nets        encoders/decoders and their parameters
objectives  the training losses and their weighted combination
trainer     joint training loop, batching, optimization, checkpoints
alignment   separate training plus linear maps between latent spaces
decoder     text index, acoustic posteriors, trigram LM, beam search
harness     WER scoring, experiment grids, result tables, contours
"""

__version__ = "0.1.0"
