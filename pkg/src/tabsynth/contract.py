"""Conformance checks for servers implementing the fine-tuning wire protocol.

These run the same scenarios the client test suite uses against a mocked
transport, so a live server can be validated with no extra test code: pass
any session object with requests-style `get`/`post` and a base URL.
"""

from __future__ import annotations

from .backends import FinetuneConfig, GenParams, RemoteBackend
from .errors import EndpointError


def run_remote_backend_contract(base_url, session, corpus, config, prefix, sleep=None):
    """Exercise the full protocol against `base_url` and return the job report.

    Checks, in order:
      1. /generate before any training is refused with status 409.
      2. /finetune on an invalid config (epochs=0) is refused with status 400.
      3. /finetune on `corpus` completes; the report carries state "done" and
         one loss per epoch.
      4. /status/<unknown> answers 404.
      5. /generate returns `count` texts, each starting with `prefix`.

    Raises AssertionError on any violation.
    """
    kwargs = {"session": session}
    if sleep is not None:
        kwargs["sleep"] = sleep
        kwargs["poll_interval"] = 0.05
    backend = RemoteBackend(base_url, **kwargs)

    try:
        backend.generate(prefix, GenParams(seed=0, max_new_tokens=8, count=1))
    except EndpointError as exc:
        assert exc.status == 409, f"pre-training generate: expected 409, got {exc.status}"
    else:
        raise AssertionError("generate before training should be refused")

    bad = session.post(
        backend.base_url + "/finetune",
        json={"corpus": list(corpus), "config": {**config.to_payload(), "epochs": 0}},
        timeout=backend.timeout,
    )
    assert bad.status_code == 400, f"invalid config: expected 400, got {bad.status_code}"

    report = backend.finetune(corpus, config)
    assert report["state"] == "done", f"training report state: {report['state']!r}"
    losses = report["losses"]
    assert len(losses) == config.epochs, (
        f"expected {config.epochs} epoch losses, got {len(losses)}"
    )

    try:
        backend._request("GET", "/status/no-such-job")
    except EndpointError as exc:
        assert exc.status == 404, f"unknown job: expected 404, got {exc.status}"
    else:
        raise AssertionError("unknown job id should answer 404")

    params = GenParams(seed=11, max_new_tokens=24, temperature=0.8, count=3)
    texts = backend.generate(prefix, params)
    assert len(texts) == params.count, f"expected {params.count} texts, got {len(texts)}"
    for text in texts:
        assert text.startswith(prefix), f"generation {text!r} does not start with prefix"

    return report
