"""Chunk-autoregressive speech generation on an FSQ token codec.

Autoregression runs over fixed 2-second chunks of 12.5 Hz tokens; inside a
chunk, a flow-matching denoiser predicts all token embeddings in parallel and
snaps them onto the quantizer lattice. Committed chunks live in a KV cache.
The package also ships the codec (bidirectional encoder, streaming causal
decoder with ISTFT synthesis), an evaluation kit (TNFE schedules, FAD, SNR,
symbol error rate, latency), and a synthetic verifiable corpus.
"""

__version__ = "0.1.0"
