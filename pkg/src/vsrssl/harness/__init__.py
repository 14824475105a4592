from .cli import cli_dispatch
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import evaluate, fraction_sweep, gen_corpus, pretrain, tap_study, train_sentence, train_word
from .plots import emit_plot
