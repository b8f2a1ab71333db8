"""Non-autoregressive captioning of synthetic scenes.

A coarse-word position aligner (recurrent, autoregressive) feeds a parallel
Transformer decoder that emits every caption position in one pass. Includes
deterministic and soft-distribution inference, two autoregressive/plain-NA
baselines, a synthetic scene corpus generator, training, evaluation metrics,
and a decode-latency benchmark.
"""

__version__ = "0.1.0"
