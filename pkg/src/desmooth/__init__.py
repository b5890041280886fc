"""Truncation sampling as desmoothing: truncation rules, a smoothing model,
an n-gram demo model and the analyses built on them."""
from .dist import (Dist, NoDistribution, Rng, Vocab, avg_neg_log_prob, entropy, kl_divergence, sample,
                   total_variation)
from .truncation import (KINDS, AllowedSet, TruncationRule, allowed, allowed_epsilon, allowed_eta,
                         allowed_top_k, allowed_top_p, allowed_typical, apply_rule, truncate)
from .smoothing import (RecoveryReport, SmoothingScenario, TvsWeights, bound_absolute, bound_relative,
                        eta_star, sample_scenario, smooth, tv_s, verify_recovery)
from .ngram import GenerationRecord, NGramModel, UnseenContext, cond_dist, generate, train, train_documents
from .analysis import (ChecklistCase, EntropyBucketStats, EntropyProfile, RepetitionVerdict,
                       build_adversarial_prompt, builtin_cases, detect_repetition, entropy_profile,
                       repetition_experiment, run_checklist)
from .formats import FormatError, load_dump, load_model, save_model, write_dump
from .presets import PRESETS, preset

__version__ = "0.1.0"
