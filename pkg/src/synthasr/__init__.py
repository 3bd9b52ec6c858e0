"""Speech recognition trained on real plus synthesized speech.

Subpackages: ``dsp`` (features and WAV I/O), ``vocoder`` (Griffin & Lim),
``augment``, ``nn`` (tape autodiff), ``text`` (normalisation and BPE),
``tts``, ``asr`` and ``pipeline``.
"""
__version__ = "0.1.0"
