"""Descriptor construction protocols.

Four ways to obtain the per-column descriptor texts used as encoding
subjects: raw column names, an expert-written mapping file, one-line feature
descriptions requested from a chat-completion endpoint, and novel feature
names invented by an endpoint from value ranges alone.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass, replace

import requests

from .codec import DescriptorSet, sanitize_descriptor
from .errors import ConfigError, EndpointError, ProtocolError

log = logging.getLogger(__name__)

LLM_GUIDED = "llm_guided"
NOVEL_MAPPING = "novel_mapping"

LLM_GUIDED_TEMPLATE = (
    "For a dataset named {name}, the given column names are {columns}. "
    "You need to provide a short one-line description of each feature."
)

NOVEL_MAPPING_TEMPLATE = (
    "I have a dataset that does not have meaningful names for features. "
    "Given the ranges of the columns are {ranges}, suggest a term/phenomenon "
    "from {field} that can take values in each of the given ranges. "
    "Rules are: (i) the terms/phenomenon should be from the same field, "
    "(ii) no two suggestions can be identical."
)

# Appended when an endpoint response fails to parse and we re-query.
REFORMAT_INSTRUCTION = "Answer with exactly one line per feature."

_INDEXED_LINE = re.compile(r"^\s*\d+\s*[.)]\s*(.*)$")


@dataclass(frozen=True)
class DescriptorQuery:
    kind: str
    text: str
    expected_count: int

    def __post_init__(self):
        if self.kind not in (LLM_GUIDED, NOVEL_MAPPING):
            raise ProtocolError(f"unknown query kind {self.kind!r}")
        if not self.text:
            raise ProtocolError("empty query text")


@dataclass(frozen=True)
class ChatEndpointConfig:
    base_url: str
    model_id: str
    auth_token_env: str
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")


def baseline_descriptors(schema):
    """Descriptors are the (sanitized) column names themselves."""
    return DescriptorSet.build(schema.columns, schema.columns, "baseline")


def expert_descriptors(schema, descriptor_file):
    """Load expert-written descriptors from a `column_name: text` file."""
    mapping = {}
    with open(descriptor_file, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if ":" not in line:
                raise ProtocolError(
                    f"{descriptor_file}:{lineno}: expected `column_name: descriptor text`"
                )
            name, _, text = line.partition(":")
            name, text = name.strip(), text.strip()
            if name in mapping:
                raise ProtocolError(f"{descriptor_file}:{lineno}: duplicate entry for {name!r}")
            if name not in schema.columns:
                raise ProtocolError(f"{descriptor_file}:{lineno}: unknown column {name!r}")
            mapping[name] = text
    missing = [c for c in schema.columns if c not in mapping]
    if missing:
        raise ProtocolError(f"descriptor file missing columns: {missing}")
    texts = [sanitize_descriptor(mapping[c]) for c in schema.columns]
    _require_unique(texts)
    return DescriptorSet.build(schema.columns, texts, "expert")


def build_llm_guided_query(dataset_name, column_names):
    """Render the description-request query for named columns."""
    if not column_names:
        raise ProtocolError("no column names to describe")
    if not dataset_name:
        raise ProtocolError("empty dataset name")
    text = LLM_GUIDED_TEMPLATE.format(name=dataset_name, columns=", ".join(column_names))
    return DescriptorQuery(kind=LLM_GUIDED, text=text, expected_count=len(column_names))


def build_novel_mapping_query(ranges, field_name):
    """Render the range-to-term query for columns with meaningless names."""
    if not ranges:
        raise ProtocolError("no column ranges given")
    if not field_name:
        raise ProtocolError("empty field name")
    text = NOVEL_MAPPING_TEMPLATE.format(ranges=", ".join(ranges), field=field_name)
    return DescriptorQuery(kind=NOVEL_MAPPING, text=text, expected_count=len(ranges))


def request_descriptors(config, query, session=None, sleep=time.sleep):
    """POST the query to a chat-completion endpoint and return the reply text.

    Retries transport failures and 5xx statuses up to `config.max_retries`
    times with exponential backoff; other non-200 statuses fail immediately.
    """
    token = os.environ.get(config.auth_token_env)
    if not token:
        raise ConfigError(
            f"auth token environment variable {config.auth_token_env!r} is not set"
        )
    sess = session if session is not None else requests.Session()
    body = {
        "model": config.model_id,
        "messages": [{"role": "user", "content": query.text}],
    }
    headers = {"Authorization": f"Bearer {token}"}
    delay = 1.0
    failure = None
    for attempt in range(config.max_retries + 1):
        try:
            resp = sess.post(config.base_url, json=body, headers=headers, timeout=config.timeout)
        except (requests.RequestException, OSError) as exc:
            failure = f"transport failure: {exc}"
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise EndpointError(
                        f"malformed completion payload: {exc}", status=200
                    ) from exc
            if resp.status_code >= 500:
                failure = f"status {resp.status_code}"
            else:
                raise EndpointError(
                    f"endpoint returned status {resp.status_code}",
                    status=resp.status_code,
                    body=resp.text,
                )
        if attempt < config.max_retries:
            sleep(delay)
            delay *= 2
    raise EndpointError(f"retries exhausted ({config.max_retries}); last error: {failure}")


def parse_descriptor_response(response, column_names):
    """Parse `name: description` lines (optionally `N. name: description`).

    Every named column must be covered exactly once and descriptors must stay
    unique after sanitization; anything else fails fast with the raw response
    logged for manual repair.
    """
    mapping = {}
    for line in response.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _INDEXED_LINE.match(line)
        if m:
            line = m.group(1)
        if ":" not in line:
            _log_unparsed(response)
            raise ProtocolError(f"unparseable descriptor line: {line!r}")
        name, _, text = line.partition(":")
        name, text = name.strip(), text.strip()
        if name not in column_names:
            _log_unparsed(response)
            raise ProtocolError(f"response names unknown column {name!r}")
        if name in mapping:
            _log_unparsed(response)
            raise ProtocolError(f"response describes column {name!r} twice")
        if not text:
            _log_unparsed(response)
            raise ProtocolError(f"empty description for column {name!r}")
        mapping[name] = text
    missing = [c for c in column_names if c not in mapping]
    if missing:
        _log_unparsed(response)
        raise ProtocolError(f"response missing columns: {missing}")
    texts = [sanitize_descriptor(mapping[c]) for c in column_names]
    _require_unique(texts)
    return DescriptorSet.build(tuple(column_names), texts, LLM_GUIDED)


def parse_mapping_response(response, column_names):
    """Parse one suggested term per line, assigned to columns positionally.

    The line count must equal the column count and no two suggestions may be
    identical (checked after sanitization).
    """
    suggestions = []
    for line in response.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _INDEXED_LINE.match(line)
        if m:
            line = m.group(1).strip()
        if not line:
            _log_unparsed(response)
            raise ProtocolError("empty suggestion line")
        suggestions.append(line)
    expected = len(column_names)
    if len(suggestions) != expected:
        _log_unparsed(response)
        raise ProtocolError(f"expected {expected} suggestions, got {len(suggestions)}")
    texts = [sanitize_descriptor(s) for s in suggestions]
    _require_unique(texts)
    return DescriptorSet.build(tuple(column_names), texts, NOVEL_MAPPING)


def request_descriptor_set(config, query, column_names, session=None, sleep=time.sleep):
    """Query the endpoint and parse its reply into a DescriptorSet.

    When the reply fails to parse, re-queries up to `config.max_retries`
    times with a one-line-per-feature instruction appended. Returns the
    descriptor set together with the raw response that produced it, so
    callers can cache the response for replay.
    """
    parser = parse_descriptor_response if query.kind == LLM_GUIDED else parse_mapping_response
    attempt_query = query
    last_error = None
    for attempt in range(config.max_retries + 1):
        raw = request_descriptors(config, attempt_query, session=session, sleep=sleep)
        try:
            return parser(raw, column_names), raw
        except ProtocolError as exc:
            last_error = exc
            attempt_query = replace(query, text=query.text + " " + REFORMAT_INSTRUCTION)
    raise last_error


def _require_unique(texts):
    seen = set()
    for text in texts:
        if text in seen:
            raise ProtocolError(f"duplicate descriptor after sanitization: {text!r}")
        seen.add(text)


def _log_unparsed(response):
    log.error("could not parse descriptor response; raw text follows\n%s", response)
