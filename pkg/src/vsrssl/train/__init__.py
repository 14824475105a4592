from .ctc import ctc_loss, ctc_loss_batch
from .decode import CTCPrefixScorer, beam_search, beam_search_decode, greedy_decode
from .losses import joint_loss, l1_pretext_loss, label_smoothed_ce, soft_cross_entropy
from .loops import (
    RunResult,
    TrainPlan,
    plan_defaults,
    run_pretext,
    run_sentence_downstream,
    run_word_downstream,
)
from .metrics import (
    MetricRecord,
    corpus_wer,
    edit_distance,
    read_metrics_csv,
    top1_accuracy,
    word_error_rate,
    write_metrics_csv,
)
from .optim import NonFiniteGradient, Optimizer, OptimState, noam_lr, optimizer_step
