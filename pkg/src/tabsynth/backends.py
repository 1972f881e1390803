"""Text-generation backends behind one small contract.

A backend exposes `finetune(corpus, config) -> report` and
`generate(prefix, params) -> list[str]`. Two realizations live here: a
deterministic seeded n-gram model for desk-scale runs, and a client for the
remote fine-tuning service (training jobs over HTTP, sampled continuations
from the resulting model or any of its checkpoints).
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field

import requests

from .errors import ConfigError, EndpointError, StateError, TrainError

FULL = "full"
LOW_RANK = "low_rank"

WORD = "word"
CHAR = "char"

# Sentinels padded around each training line; private-use codepoints so they
# cannot collide with corpus tokens.
LINE_START = ""
LINE_END = ""


@dataclass(frozen=True)
class FinetuneConfig:
    """Training knobs for the remote backend (the n-gram backend ignores them).

    Defaults: full fine-tuning at learning rate 5e-5 for 400 epochs, or
    low-rank adaptation with rank 16 and scale 32.
    """

    epochs: int = 400
    learning_rate: float = 5e-5
    mode: str = FULL
    rank_r: int = 16
    alpha: float = 32.0
    base_model_id: str = "distilgpt2"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.mode not in (FULL, LOW_RANK):
            raise ConfigError(f"unknown finetune mode {self.mode!r}")
        if self.mode == LOW_RANK and self.rank_r < 1:
            raise ConfigError(f"rank_r must be >= 1, got {self.rank_r}")

    def to_payload(self):
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "mode": self.mode,
            "rank_r": self.rank_r,
            "alpha": self.alpha,
            "base_model_id": self.base_model_id,
        }


@dataclass(frozen=True)
class GenParams:
    """Sampling knobs. The seed is mandatory; there is no wall-clock default."""

    seed: int
    max_new_tokens: int = 64
    temperature: float = 0.7
    count: int = 1

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")

    def to_payload(self):
        return {
            "seed": self.seed,
            "max_new_tokens": self.max_new_tokens,
            "temperature": self.temperature,
            "count": self.count,
        }


def tokenize(line, granularity=WORD):
    """Split a line into tokens.

    Word granularity splits on whitespace and peels one trailing comma off a
    piece, so the encoding grammar's ", " separator survives as its own
    token. Char granularity is one token per character.
    """
    if granularity == CHAR:
        return list(line)
    tokens = []
    for piece in line.split():
        if piece != "," and piece.endswith(","):
            tokens.append(piece[:-1])
            tokens.append(",")
        else:
            tokens.append(piece)
    return tokens


def detokenize(tokens, granularity=WORD):
    """Rebuild text from tokens; the inverse of tokenize for encoded rows."""
    if granularity == CHAR:
        return "".join(tokens)
    out = ""
    for token in tokens:
        if token == ",":
            out += ","
        elif out:
            out += " " + token
        else:
            out = token
    return out


@dataclass
class NGramModel:
    """Frequency tables over k-token contexts; immutable once trained."""

    order_k: int
    granularity: str
    counts: dict[tuple[str, ...], dict[str, int]]
    vocabulary: tuple[str, ...]
    token_ids: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.token_ids:
            self.token_ids = {token: i for i, token in enumerate(self.vocabulary)}


def ngram_finetune(corpus, order_k, granularity=WORD):
    """Tabulate every (k-token context -> next token) occurrence in `corpus`.

    Each line is padded with k start sentinels and one end sentinel, so line
    boundaries are part of the model.
    """
    if order_k < 1:
        raise ConfigError(f"order_k must be >= 1, got {order_k}")
    if not corpus:
        raise TrainError("empty training corpus")
    if granularity not in (WORD, CHAR):
        raise ConfigError(f"unknown granularity {granularity!r}")
    counts = {}
    vocab = {LINE_START, LINE_END}
    for line in corpus:
        tokens = tokenize(line, granularity)
        vocab.update(tokens)
        padded = [LINE_START] * order_k + tokens + [LINE_END]
        for i in range(order_k, len(padded)):
            context = tuple(padded[i - order_k : i])
            table = counts.setdefault(context, {})
            table[padded[i]] = table.get(padded[i], 0) + 1
    return NGramModel(
        order_k=order_k,
        granularity=granularity,
        counts=counts,
        vocabulary=tuple(sorted(vocab)),
    )


def _next_token(model, context, rng, temperature):
    table = model.counts.get(context)
    if table is None:
        return LINE_END
    # Token-id order pins determinism and the temperature-0 tie-break.
    items = sorted(table.items(), key=lambda kv: model.token_ids[kv[0]])
    if temperature == 0:
        best_token, best_count = items[0]
        for token, count in items[1:]:
            if count > best_count:
                best_token, best_count = token, count
        return best_token
    # weight_i proportional to (count_i / total)^(1/T); computed in log space
    # so very low temperatures cannot underflow to an all-zero table.
    scaled = [math.log(count) / temperature for _, count in items]
    peak = max(scaled)
    weights = [math.exp(s - peak) for s in scaled]
    total = sum(weights)
    target = rng.random() * total
    acc = 0.0
    for (token, _), weight in zip(items, weights):
        acc += weight
        if target < acc:
            return token
    return items[-1][0]


def _sample_continuation(model, prefix_tokens, rng, params):
    context = ([LINE_START] * model.order_k + list(prefix_tokens))[-model.order_k :]
    out = []
    while len(out) < params.max_new_tokens:
        token = _next_token(model, tuple(context), rng, params.temperature)
        if token == LINE_END:
            break
        out.append(token)
        context = context[1:] + [token]
    return out


def _generate_one(model, prefix, rng, params):
    prefix_tokens = tokenize(prefix, model.granularity)
    continuation = _sample_continuation(model, prefix_tokens, rng, params)
    if model.granularity == CHAR:
        return prefix + "".join(continuation)
    text = prefix
    for token in continuation:
        if token == ",":
            text += ","
        elif text:
            text += " " + token
        else:
            text = token
    return text


def ngram_generate(model, prefix, params):
    """Sample one continuation of `prefix` from the model, seeded by params."""
    return _generate_one(model, prefix, random.Random(params.seed), params)


def save_ngram(model, path):
    """Serialize an NGramModel to a versioned JSON dump."""
    payload = {
        "format": "ngram-model",
        "version": 1,
        "order_k": model.order_k,
        "granularity": model.granularity,
        "vocabulary": list(model.vocabulary),
        "counts": [
            [list(context), sorted(table.items())]
            for context, table in sorted(model.counts.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=True, indent=None, separators=(",", ":"))


def load_ngram(path):
    """Load a model written by save_ngram."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "ngram-model" or payload.get("version") != 1:
        raise ConfigError(f"{path}: not a version-1 ngram model dump")
    counts = {
        tuple(context): {token: count for token, count in table}
        for context, table in payload["counts"]
    }
    return NGramModel(
        order_k=payload["order_k"],
        granularity=payload["granularity"],
        counts=counts,
        vocabulary=tuple(payload["vocabulary"]),
    )


class NGramBackend:
    """Desk-scale backend: trains instantly, samples deterministically."""

    def __init__(self, order_k, granularity=WORD):
        if order_k < 1:
            raise ConfigError(f"order_k must be >= 1, got {order_k}")
        self.order_k = order_k
        self.granularity = granularity
        self.model = None
        self.finetune_config = None

    @property
    def backend_id(self):
        return f"ngram:k={self.order_k}"

    def finetune(self, corpus, config=None):
        if not corpus:
            raise TrainError("empty training corpus")
        self.model = ngram_finetune(corpus, self.order_k, self.granularity)
        self.finetune_config = config
        return {
            "status": "trained",
            "lines": len(corpus),
            "contexts": len(self.model.counts),
            "vocabulary": len(self.model.vocabulary),
            "order_k": self.order_k,
        }

    def generate(self, prefix, params):
        if self.model is None:
            raise StateError("backend not trained; call finetune first")
        rng = random.Random(params.seed)
        return [_generate_one(self.model, prefix, rng, params) for _ in range(params.count)]


class RemoteBackend:
    """Client for the fine-tuning service's HTTP protocol.

    `finetune` submits a job and polls its status until it finishes;
    `generate` asks for sampled continuations, optionally from a named
    checkpoint. Any non-2xx status surfaces as EndpointError carrying the
    status code and response body.
    """

    def __init__(
        self,
        base_url,
        session=None,
        timeout=30.0,
        poll_interval=0.5,
        max_wait=None,
        checkpoint=None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.session = session if session is not None else requests.Session()
        self.timeout = timeout
        self.poll_interval = poll_interval
        self.max_wait = max_wait
        self.checkpoint = checkpoint
        self.sleep = sleep
        self.job_id = None
        self.finetune_config = None

    @property
    def backend_id(self):
        tag = f"@{self.checkpoint}" if self.checkpoint else ""
        return f"remote:{self.base_url}{tag}"

    def at_checkpoint(self, tag):
        """A view of this backend that samples from checkpoint `tag`."""
        clone = RemoteBackend(
            self.base_url,
            session=self.session,
            timeout=self.timeout,
            poll_interval=self.poll_interval,
            max_wait=self.max_wait,
            checkpoint=tag,
            sleep=self.sleep,
        )
        clone.job_id = self.job_id
        clone.finetune_config = self.finetune_config
        return clone

    def _request(self, method, path, payload=None):
        url = self.base_url + path
        try:
            if method == "GET":
                resp = self.session.get(url, timeout=self.timeout)
            else:
                resp = self.session.post(url, json=payload, timeout=self.timeout)
        except (requests.RequestException, OSError) as exc:
            raise EndpointError(f"{method} {path}: transport failure: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise EndpointError(
                f"{method} {path}: status {resp.status_code}",
                status=resp.status_code,
                body=resp.text,
            )
        return resp.json()

    def finetune(self, corpus, config):
        if not corpus:
            raise TrainError("empty training corpus")
        payload = {"corpus": list(corpus), "config": config.to_payload()}
        submitted = self._request("POST", "/finetune", payload)
        self.job_id = submitted["job_id"]
        self.finetune_config = config
        waited = 0.0
        while True:
            status = self.status()
            if status["state"] == "done":
                return status
            if status["state"] == "failed":
                raise TrainError(f"remote job failed: {status.get('error', 'unknown error')}")
            if self.max_wait is not None and waited >= self.max_wait:
                raise EndpointError(f"job {self.job_id} still {status['state']} after {waited}s")
            self.sleep(self.poll_interval)
            waited += self.poll_interval

    def status(self):
        if self.job_id is None:
            raise StateError("no job submitted")
        return self._request("GET", f"/status/{self.job_id}")

    def generate(self, prefix, params):
        payload = {"prompt_prefix": prefix, "params": params.to_payload()}
        if self.checkpoint:
            payload["checkpoint"] = self.checkpoint
        return self._request("POST", "/generate", payload)["texts"]
