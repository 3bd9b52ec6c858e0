"""Attention encoder-decoder recognition: model, decoding, LM scorers, WER."""
from .decode import AsrStepper, Hypothesis, beam_search, beam_search_all, greedy_decode, sequence_log_prob
from .lm import LmScorer, NgramLM, UniformLM
from .model import (EOS, AsrConfig, AsrDecoder, AsrEncoder, AttentionAsr, asr_loss, ctc_feasible,
                    encoder_lengths, make_asr_batch)
from .train import asr_batcher, asr_trainer, load_asr, train_asr
from .wer import WerResult, corpus_wer, wer

__all__ = [
    "EOS", "AsrConfig", "AsrDecoder", "AsrEncoder", "AsrStepper", "AttentionAsr", "Hypothesis", "LmScorer",
    "NgramLM", "UniformLM", "WerResult", "asr_batcher", "asr_loss", "asr_trainer", "beam_search",
    "beam_search_all", "corpus_wer", "ctc_feasible", "encoder_lengths", "greedy_decode", "load_asr",
    "make_asr_batch", "sequence_log_prob", "train_asr", "wer",
]
