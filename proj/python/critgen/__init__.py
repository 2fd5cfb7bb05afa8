"""Instruction-conditioned generation of clinical-trial eligibility criteria.

The heavy lifting lives in the C++ extension; configs are plain dicts using
the same keys as the ``critgen`` command line (``critgen.config_keys()``).
"""

from ._core import (
    ConfigError,
    Corpus,
    CritgenError,
    DivergenceError,
    FormatError,
    Model,
    Store,
    bleu1,
    cider,
    config_keys,
    derive_seed,
    encode_setup,
    evaluate,
    extend,
    finetune,
    generate,
    meteor,
    parse_criterion,
    pretrain,
    resolve_config,
    rouge_l,
)

try:
    from ._core import __version__
except ImportError:
    __version__ = "unknown"
