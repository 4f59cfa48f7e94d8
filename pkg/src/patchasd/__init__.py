"""Machine anomalous sound detection from patch-level spectrogram embeddings.

Pipeline: log-mel frontend -> 16x16 patch tokens -> transformer encoder ->
attentive statistics pooling -> angular-margin (ArcFace) fine-tuning on
metadata labels -> nearest-neighbor cosine scoring -> AUC/pAUC evaluation.
"""

__version__ = "0.1.0"
