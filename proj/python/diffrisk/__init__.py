"""Diffusion learners over networks: simulation, excess-risk metrics and closed-form predictors."""

import json
import os
from pathlib import Path

# wheels ship the presets next to the extension; source trees fall back to the compiled-in path
_bundled = Path(__file__).resolve().parent / "presets"
if _bundled.is_dir():
    os.environ.setdefault("DIFFRISK_PRESETS", str(_bundled))

from ._diffrisk import (  # noqa: E402
    Config,
    DiffriskError,
    ParseError,
    ValidationError,
    __version__,
    apply_overrides,
    list_presets,
    load_config,
    load_preset,
    metropolis_weights,
    parse_config,
    predict_formulas,
    predict_json,
    read_libsvm,
    run,
    scalar_steady_state_er,
    select_learners,
    simulate,
)


def predict(config, formula, learner=""):
    """Closed-form prediction as a dict (see `predict_formulas()`)."""
    return json.loads(predict_json(config, formula, learner))


__all__ = [
    "Config",
    "DiffriskError",
    "ParseError",
    "ValidationError",
    "__version__",
    "apply_overrides",
    "list_presets",
    "load_config",
    "load_preset",
    "metropolis_weights",
    "parse_config",
    "predict",
    "predict_formulas",
    "predict_json",
    "read_libsvm",
    "run",
    "scalar_steady_state_er",
    "select_learners",
    "simulate",
]
