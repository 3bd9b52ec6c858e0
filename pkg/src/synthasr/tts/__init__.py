from .model import (AttentionModule, MelToLinearNet, StyleTokenBank, Tacotron, TtsConfig, TtsDecoder,
                    TtsEncoder, posenc, stop_targets, tts_loss)
from .synth import StopController, SynthesisResult, mel_to_linear, synthesize
from .train import (Mel2LinExample, TrainConfig, TtsExample, load_mel2lin, load_tts, train_mel2lin,
                    train_tts)
