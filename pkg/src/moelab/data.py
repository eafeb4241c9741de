"""Byte-level corpus handling and a deterministic synthetic corpus.

Tokenization is the identity on bytes (vocab 256): no tokenizer training,
no external assets, and every corpus is reproducible from a file or a seed.
The eval split is the trailing fraction of the stream; both splits carry a
content hash so traces can verify they were taken over identical data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

__all__ = ["CorpusSplit", "load_corpus", "tokenize_bytes", "synthetic_corpus", "byte_domain"]


@dataclass(frozen=True)
class CorpusSplit:
    train: np.ndarray
    eval: np.ndarray
    train_hash: str
    eval_hash: str


def tokenize_bytes(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype=np.uint8)


def _stream_hash(tokens: np.ndarray) -> str:
    return hashlib.sha256(tokens.tobytes()).hexdigest()


def load_corpus(path, split_fraction: float = 0.1) -> CorpusSplit:
    """Read a file as a byte token stream and split off the trailing eval part."""
    if not (0.0 < split_fraction < 1.0):
        raise InvalidConfigError("split_fraction must be in (0, 1)")
    data = Path(path).read_bytes()
    if not data:
        raise InvalidInputError(f"corpus file {path} is empty")
    tokens = tokenize_bytes(data)
    n_eval = int(len(tokens) * split_fraction)
    if n_eval < 1 or n_eval >= len(tokens):
        raise InvalidConfigError("split leaves an empty side")
    train, evl = tokens[:-n_eval], tokens[-n_eval:]
    return CorpusSplit(
        train=train,
        eval=evl,
        train_hash=_stream_hash(train),
        eval_hash=_stream_hash(evl),
    )


# disjoint syllable alphabets per text domain: blocks of different domains
# look statistically different, which is what lets experts specialize
_DOMAIN_SYLLABLES = (
    "ta re mo ki lan dor su vel".split(),
    "pa ny qu ber ith on za gra".split(),
    "ple um chi sto fen ard lu my".split(),
    "ex tri os han wick jor bel da".split(),
    "cro zin fala tu ped ros nim ga".split(),
    "hy bru ack sel ort vi mun dle".split(),
    "sha pli dro ven kas il rup tor".split(),
    "je wom blu ane stre kol uf pra".split(),
)

_PUNCT = [". ", ". ", ". ", "? ", "! ", ", ", "; "]


def _domain_lexicon(rng, syllables, n_words: int) -> list[str]:
    lexicon = []
    while len(lexicon) < n_words:
        parts = rng.integers(2, 5)
        lexicon.append("".join(rng.choice(syllables) for _ in range(parts)))
    return lexicon


def synthetic_corpus(
    n_bytes: int, seed: int = 0, words_per_domain: int = 1500, n_domains: int = 4
) -> bytes:
    """Deterministic domain-blocked pseudo-text.

    Several hundred-byte blocks alternate between prose domains with
    disjoint lexicons plus a numeric record domain, so a sequence window
    usually sits inside one domain. The stream is learnable but capacity
    limited for the micro models, and the domain structure gives routed
    experts something real to specialize on.
    """
    if not 1 <= n_domains <= len(_DOMAIN_SYLLABLES):
        raise InvalidConfigError(f"n_domains must be in [1, {len(_DOMAIN_SYLLABLES)}]")
    rng = np.random.default_rng(seed)
    lexicons = [
        _domain_lexicon(rng, syl, words_per_domain)
        for syl in _DOMAIN_SYLLABLES[:n_domains]
    ]
    ranks = np.arange(1, words_per_domain + 1, dtype=np.float64)
    probs = ranks**-1.1
    probs /= probs.sum()

    def prose_block(domain: int, target: int) -> str:
        parts = []
        size = 0
        lex = lexicons[domain]
        while size < target:
            length = int(rng.integers(4, 12))
            words = [lex[i] for i in rng.choice(words_per_domain, size=length, p=probs)]
            sentence = " ".join(words).capitalize() + rng.choice(_PUNCT)
            parts.append(sentence)
            size += len(sentence)
        return "".join(parts) + "\n"

    def record_block(target: int) -> str:
        parts = []
        size = 0
        while size < target:
            key = rng.choice(("x", "y", "k", "v", "n"))
            line = f"{key}{rng.integers(0, 100)} = {rng.integers(0, 10000)}; "
            if rng.random() < 0.25:
                line += f"sum -> {rng.integers(0, 100000)}\n"
            parts.append(line)
            size += len(line)
        return "".join(parts) + "\n"

    chunks: list[str] = []
    size = 0
    while size < n_bytes:
        target = int(rng.integers(300, 900))
        which = int(rng.integers(0, len(lexicons) + 1))
        block = record_block(target) if which == len(lexicons) else prose_block(which, target)
        chunks.append(block)
        size += len(block)
    return "".join(chunks).encode("ascii")[:n_bytes]


def byte_domain(token: int) -> str:
    """Coarse domain tag for a byte token: the desk-scale stand-in for
    corpus domains when measuring expert specialization."""
    b = int(token)
    if 48 <= b <= 57:
        return "digit"
    if 65 <= b <= 90 or 97 <= b <= 122:
        return "alpha"
    if b in (32, 9, 10, 13):
        return "space"
    if 33 <= b <= 126:
        return "punct"
    return "other"
