"""MAUVE-selected hyperparameters for the four GPT-2 sizes.

Values are the best-performing settings reported for open-ended WebText
generation; eta presets give epsilon and use alpha = sqrt(epsilon).
"""
from .truncation import TruncationRule, canonical_kind

MODEL_TAGS = ("small", "med", "large", "xl")

PRESETS = {
    "top_p":   {"small": 0.9,    "med": 0.89,   "large": 0.95,   "xl": 0.95},
    "typical": {"small": 0.9,    "med": 0.9,    "large": 0.92,   "xl": 0.92},
    "epsilon": {"small": 0.0006, "med": 0.0009, "large": 0.0003, "xl": 0.0003},
    "eta":     {"small": 0.002,  "med": 0.0006, "large": 0.0006, "xl": 0.0003},
}

_TAG_ALIASES = {"sm": "small", "medium": "med", "lg": "large", "xl": "xl", "XL": "xl"}


def preset(model_tag: str, rule_kind: str) -> TruncationRule:
    tag = _TAG_ALIASES.get(model_tag, model_tag).lower()
    if tag not in MODEL_TAGS:
        raise ValueError(f"unknown model tag {model_tag!r}; expected one of {MODEL_TAGS}")
    kind = canonical_kind(rule_kind)
    if kind not in PRESETS:
        raise ValueError(f"no preset for {kind!r}")
    return TruncationRule.from_param(kind, PRESETS[kind][tag])
