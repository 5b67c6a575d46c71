"""Prior-guided adaptive masked-diffusion decoding on a synthetic transcription task."""

from .config import RunConfig, load_config
from .ctc import PriorHypothesis, compute_prior, ctc_loss, greedy_decode
from .denoiser import AsrModel, DenoiserConfig, forward_masking
from .metrics import corpus_wer, wer
from .scheduler import SchedulerConfig, run, vanilla_decode
from .synthdata import CorpusSpec, gen_corpus, load_jsonl, text_to_frames
from .training import load_model, save_model, train_ctc_head, train_denoiser
from .vocab import Vocab

__version__ = "0.1.0"

__all__ = [
    "AsrModel",
    "CorpusSpec",
    "DenoiserConfig",
    "PriorHypothesis",
    "RunConfig",
    "SchedulerConfig",
    "Vocab",
    "compute_prior",
    "corpus_wer",
    "ctc_loss",
    "forward_masking",
    "gen_corpus",
    "greedy_decode",
    "load_config",
    "load_jsonl",
    "load_model",
    "run",
    "save_model",
    "text_to_frames",
    "train_ctc_head",
    "train_denoiser",
    "vanilla_decode",
    "wer",
    "__version__",
]
