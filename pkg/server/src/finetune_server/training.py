"""Next-token training loop with per-epoch losses and periodic checkpoints."""

from __future__ import annotations

import math
import random

import torch
from torch import nn

from .config import DEFAULTS
from .modeling import build_model, model_logits

PAD = -100  # ignore_index for the loss


def _batches(encoded, batch_size, epoch_seed):
    order = list(range(len(encoded)))
    random.Random(epoch_seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        yield [encoded[i] for i in order[start : start + batch_size]]


def _collate(batch):
    width = max(len(ids) for ids in batch)
    inputs = torch.zeros(len(batch), width, dtype=torch.long)
    targets = torch.full((len(batch), width), PAD, dtype=torch.long)
    for row, ids in enumerate(batch):
        inputs[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        targets[row, : len(ids) - 1] = torch.tensor(ids[1:], dtype=torch.long)
    return inputs, targets


def train(job, defaults=DEFAULTS):
    """Fine-tune on the job's corpus, mutating the job as epochs complete.

    Appends one mean cross-entropy loss per epoch to job.losses and snapshots
    model weights every ceil(epochs / checkpoint_fraction) epochs.
    """
    config = job.config
    bundle = build_model(job.corpus, config, defaults)
    encoded = [
        bundle.encode_line(line, defaults.max_sequence_length) for line in job.corpus
    ]
    encoded = [ids for ids in encoded if len(ids) >= 2]
    if not encoded:
        raise RuntimeError("corpus produced no trainable sequences")
    params = bundle.trainable_parameters()
    optimizer = torch.optim.AdamW(
        params, lr=config.learning_rate, weight_decay=defaults.weight_decay
    )
    loss_fn = nn.CrossEntropyLoss(ignore_index=PAD)
    every = max(1, math.ceil(config.epochs / defaults.checkpoint_fraction))
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        steps = 0
        for batch in _batches(encoded, defaults.batch_size, epoch_seed=1000 + epoch):
            inputs, targets = _collate(batch)
            logits = model_logits(bundle, inputs)
            loss = loss_fn(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
            steps += 1
        job.record_epoch(total / steps)
        if epoch % every == 0 or epoch == config.epochs:
            job.add_checkpoint(f"epoch-{epoch}", epoch, _snapshot(bundle))
    job.finish(bundle)


def _snapshot(bundle):
    return {k: v.detach().clone() for k, v in bundle.model.state_dict().items()}


def load_snapshot(bundle, snapshot):
    bundle.model.load_state_dict(snapshot)
    return bundle
