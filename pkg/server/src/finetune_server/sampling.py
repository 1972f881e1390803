"""Seeded sampling of line continuations from a trained model."""

from __future__ import annotations

import torch

from .modeling import model_logits


@torch.no_grad()
def generate(bundle, prompt_prefix, params, max_sequence_length):
    """Sample `params['count']` continuations of the prefix.

    Each text starts with the prefix and stops at the end-of-line token or
    after max_new_tokens generated tokens. One torch generator seeded with
    params['seed'] drives all draws, so identical requests reproduce
    identical texts. Temperature 0 decodes greedily.
    """
    generator = torch.Generator(device="cpu").manual_seed(int(params["seed"]))
    temperature = float(params["temperature"])
    prefix_ids = bundle.encode_prefix(prompt_prefix)
    texts = []
    for _ in range(int(params["count"])):
        ids = list(prefix_ids)
        new_ids = []
        for _ in range(int(params["max_new_tokens"])):
            window = ids[-max_sequence_length:]
            logits = model_logits(bundle, torch.tensor([window], dtype=torch.long))[0, -1]
            if temperature == 0:
                next_id = int(logits.argmax())
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=generator))
            if next_id == bundle.eos_id:
                break
            ids.append(next_id)
            new_ids.append(next_id)
        continuation = bundle.decode(new_ids)
        if "\n" in continuation:
            continuation = continuation.split("\n", 1)[0]
        texts.append(prompt_prefix + continuation)
    return texts
