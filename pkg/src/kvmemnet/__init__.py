"""Key-value memory captioning: per-frame key/value slots, recurrent key
addressing, attention-weighted value reads and an LSTM decoder, trained with
Adadelta on synthetic or file-based episodes."""

from .config import Config
from .data import Episode, Vocabulary, gen_copy_episode, gen_recall_episode, load_dataset, tokenize
from .layers import BOS, EOS, PAD, UNK
from .metrics import EvalPair, bleu4
from .model import Model, token_accuracy
from .optim import Adadelta, clip_gradients
from .search import beam_search, greedy_decode
from .tensor import Tape, Tensor, grad_check

__version__ = "0.1.0"

__all__ = [
    "Adadelta",
    "BOS",
    "Config",
    "EOS",
    "Episode",
    "EvalPair",
    "Model",
    "PAD",
    "Tape",
    "Tensor",
    "UNK",
    "Vocabulary",
    "beam_search",
    "bleu4",
    "clip_gradients",
    "gen_copy_episode",
    "gen_recall_episode",
    "grad_check",
    "greedy_decode",
    "load_dataset",
    "token_accuracy",
    "tokenize",
    "__version__",
]
