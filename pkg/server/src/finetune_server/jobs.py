"""Job state machine and the single-slot registry.

One training job may be active at a time; its state moves queued -> running
-> done | failed. Generation requests are served from immutable snapshots
(the finished model or any saved checkpoint), so they are safe to run
concurrently with nothing mutating them.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field


@dataclass
class Job:
    id: str
    corpus: list[str]
    config: "WireConfig"
    state: str = "queued"
    losses: list[float] = field(default_factory=list)
    checkpoints: dict[str, dict] = field(default_factory=dict)  # tag -> snapshot
    checkpoint_epochs: dict[str, int] = field(default_factory=dict)
    error: str | None = None
    bundle: object = None  # model bundle, set when done
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_epoch(self, loss):
        with self.lock:
            self.losses.append(loss)

    def add_checkpoint(self, tag, epoch, snapshot):
        with self.lock:
            self.checkpoints[tag] = snapshot
            self.checkpoint_epochs[tag] = epoch

    def finish(self, bundle):
        with self.lock:
            self.bundle = bundle
            self.state = "done"

    def fail(self, message):
        with self.lock:
            self.state = "failed"
            self.error = message

    def summary(self, defaults):
        with self.lock:
            return {
                "job_id": self.id,
                "state": self.state,
                "losses": list(self.losses),
                "checkpoints": [
                    {"tag": tag, "epoch": self.checkpoint_epochs[tag]}
                    for tag in sorted(
                        self.checkpoint_epochs, key=self.checkpoint_epochs.get
                    )
                ],
                "config": self.config.model_dump(),
                "error": self.error,
                "defaults": defaults.to_dict(),
            }


class JobRegistry:
    def __init__(self):
        self._jobs = {}
        self._lock = threading.Lock()

    def active_job(self):
        with self._lock:
            for job in self._jobs.values():
                if job.state in ("queued", "running"):
                    return job
        return None

    def create(self, corpus, config):
        with self._lock:
            for job in self._jobs.values():
                if job.state in ("queued", "running"):
                    return None
            job = Job(id=uuid.uuid4().hex[:12], corpus=list(corpus), config=config)
            self._jobs[job.id] = job
            return job

    def get(self, job_id):
        with self._lock:
            return self._jobs.get(job_id)

    def latest_done(self):
        with self._lock:
            done = [job for job in self._jobs.values() if job.state == "done"]
        return done[-1] if done else None

    def any_with_checkpoint(self, tag):
        with self._lock:
            for job in reversed(list(self._jobs.values())):
                if tag in job.checkpoints:
                    return job
        return None


def start_training(job, train_fn):
    """Run `train_fn(job)` on a daemon thread, flipping the job state."""

    def runner():
        job.state = "running"
        try:
            train_fn(job)
        except Exception as exc:  # surface any training failure in /status
            job.fail(f"{type(exc).__name__}: {exc}")

    thread = threading.Thread(target=runner, daemon=True)
    thread.start()
    return thread
