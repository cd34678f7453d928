"""Frozen sentence encoders that map an instruction string to a raw embedding.

Two implementations: a deterministic hashing encoder (no downloads, used in CI
and as the default), and an adapter for pretrained sentence-transformer models.
Both are frozen: their parameters never receive gradient updates.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9']+")


class HashingSentenceEncoder:
    """Bag-of-words encoder: tokens hash to rows of a fixed random table.

    The table is generated from ``seed`` once and never trained, which makes
    the encoder fully deterministic across processes and platforms.
    """

    name = "hashing"

    def __init__(self, d_t: int = 384, vocab_slots: int = 4096, seed: int = 0):
        self.d_t = d_t
        self.vocab_slots = vocab_slots
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.table = rng.standard_normal((vocab_slots, d_t)).astype(np.float32)
        self.table.setflags(write=False)
        self.frozen = True

    def _slot(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                                 key=str(self.seed).encode()).digest()
        return int.from_bytes(digest, "little") % self.vocab_slots

    def encode(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        vec = np.zeros(self.d_t, dtype=np.float32)
        for tok in tokens:
            vec += self.table[self._slot(tok)]
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return vec

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts])

    def checksum(self) -> str:
        return hashlib.sha256(self.table.tobytes()).hexdigest()

    def spec(self) -> dict:
        return {"kind": "hashing", "d_t": self.d_t,
                "vocab_slots": self.vocab_slots, "seed": self.seed}


class PretrainedSentenceEncoder:
    """Adapter around a sentence-transformers model (e.g. BGE-micro-v2).

    The wrapped model is frozen. Requires the optional ``sentence-transformers``
    dependency and a locally available model.
    """

    def __init__(self, model_name: str = "TaylorAI/bge-micro-v2"):
        from sentence_transformers import SentenceTransformer

        self.name = model_name
        self.model = SentenceTransformer(model_name)
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.model.eval()
        self.d_t = int(self.model.get_sentence_embedding_dimension())
        self.frozen = True

    def encode(self, text: str) -> np.ndarray:
        return self.encode_batch([text])[0]

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        out = self.model.encode(texts, convert_to_numpy=True,
                                normalize_embeddings=False, show_progress_bar=False)
        return np.asarray(out, dtype=np.float32)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def spec(self) -> dict:
        return {"kind": "pretrained", "model_name": self.name}


def build_encoder(spec: dict):
    """Rebuild an encoder from its serialized spec (checkpoint manifest)."""
    kind = spec.get("kind")
    if kind == "hashing":
        return HashingSentenceEncoder(d_t=spec["d_t"], vocab_slots=spec["vocab_slots"],
                                      seed=spec["seed"])
    if kind == "pretrained":
        return PretrainedSentenceEncoder(spec["model_name"])
    raise ValueError(f"unknown encoder spec kind: {kind!r}")
