"""Steganography toolkit that hides uniform ciphertext inside samples from
arbitrary autoregressive covertext channels by iteratively coupling block
posteriors with the channel's next-token conditionals."""

from .channels import (
    Channel,
    ChannelSpec,
    MarkovChannel,
    RemoteChannel,
    ScriptedChannel,
    Truncation,
    TruncatedChannel,
    UniformChannel,
    parse_channel_spec,
    truncate,
)
from .cipher import (
    Ciphertext,
    Key,
    bits_from_bytes,
    bytes_from_bits,
    decrypt,
    encrypt,
    gen_key,
    pack_blocks,
    unpack_blocks,
)
from .codec import (
    BlockPosterior,
    CodecState,
    DecodeResult,
    StegotextFile,
    StepRecord,
    decode,
    encode,
    stego_marginal,
)
from .coupling import (
    SparseCoupling,
    col_conditional,
    exact_mec,
    greedy_mec,
    row_conditional,
)
from .errors import StegoError
from .harness import (
    SummaryReport,
    TrialConfig,
    TrialReport,
    kl_report,
    run_trial,
    run_trials,
    speed_report,
    summarize,
    threshold_sweep,
)
from .probability import Categorical, Rng, entropy, kl, sample

__version__ = "0.1.0"

__all__ = [
    "BlockPosterior", "Categorical", "Channel", "ChannelSpec", "Ciphertext",
    "CodecState", "DecodeResult", "Key", "MarkovChannel", "RemoteChannel",
    "Rng", "ScriptedChannel", "SparseCoupling", "StegoError", "StegotextFile",
    "StepRecord", "SummaryReport", "TrialConfig", "TrialReport", "Truncation",
    "TruncatedChannel", "UniformChannel", "bits_from_bytes", "bytes_from_bits",
    "col_conditional", "decode", "decrypt", "encode", "encrypt", "entropy",
    "exact_mec", "gen_key", "greedy_mec", "kl", "kl_report", "pack_blocks",
    "parse_channel_spec", "row_conditional", "run_trial", "run_trials",
    "sample", "speed_report", "stego_marginal", "summarize", "threshold_sweep",
    "truncate", "unpack_blocks",
]
