"""Frame-level video anomaly detection from high-level per-frame features.

Upstream detectors/trackers/segmenters are consumed through file formats
(:mod:`ctxvad.ingest`); spatial, temporal and group context is mined from
them (:mod:`ctxvad.context`) and concatenated with the category vector
(:mod:`ctxvad.features`); a small denoising autoencoder
(:mod:`ctxvad.dae`) scores frames by reconstruction error
(:mod:`ctxvad.detect`, :mod:`ctxvad.metrics`, :mod:`ctxvad.pipeline`).
"""

__version__ = "0.1.0"
