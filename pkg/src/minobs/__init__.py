"""Deterministic simulator of minimal observers over a bit-stream environment."""

from .envmodel import (
    ChannelSlot,
    EmptyEnsemble,
    Environment,
    ReversibleRule,
    SignalSource,
    SpecInvalid,
    build_environment,
    emit_channel,
    inverse_step,
    repartition,
    step,
    true_fraction,
)
from .observables import (
    AgreementStats,
    Observable,
    Value,
    apply,
    commutativity_experiment,
    components_orthogonal,
    make_observable,
    output_equivalent,
)
from .observer import (
    NULL,
    ExtractorFamily,
    Observer,
    Recognizer,
    Recorded,
    SessionReport,
    build_observer,
    compile_recognizer,
    distinguish_states,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementStats", "ChannelSlot", "EmptyEnsemble", "Environment", "ExtractorFamily", "NULL",
    "Observable", "Observer", "Recognizer", "Recorded", "ReversibleRule", "SessionReport",
    "SignalSource", "SpecInvalid", "Value", "apply", "build_environment", "build_observer",
    "commutativity_experiment", "compile_recognizer", "components_orthogonal",
    "distinguish_states", "emit_channel", "inverse_step", "make_observable",
    "output_equivalent", "repartition", "step", "true_fraction",
]
