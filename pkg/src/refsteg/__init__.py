"""Carrier-reference steganography.

A message is never written into its cover carrier. Instead a deterministic
neural model is run on an existing, untouched piece of data and only the
difference between the message and the model's output is transmitted, along
with where to find the carrier and which model to run.
"""

from .carrier import (
    CarrierRecord,
    CarrierResolver,
    CarrierSupplier,
    Corpus,
    SecretLocation,
    SelectionRule,
    resolve,
    select_carrier,
)
from .codec import AlignmentPolicy, align, decode_text, diff, encode_text, recover
from .errors import *  # noqa: F401,F403
from .model import (
    ModelOutput,
    ModelParams,
    TrainingConfig,
    deserialize_model,
    featurize,
    forward,
    load_model,
    quantize,
    random_model,
    save_model,
    serialize_model,
    train,
    train_with_history,
)
from .parallel import extract_parallel, hide_parallel, merge, secret_number, split
from .protocol import (
    AuthorizationSet,
    Bundle,
    ChannelArtifacts,
    ModelFileRef,
    VerificationInfo,
    extract,
    extract_redundant,
    hide,
    hide_redundant,
    load_bundle,
    make_verification,
    package_channels,
    repackage,
    save_bundle,
    verify,
)

__version__ = "0.1.0"
