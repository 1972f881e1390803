"""Models and tokenizers.

Two backbones are supported: `builtin:tiny`, a small character-level causal
transformer trained from scratch (always available, CPU-friendly), and any
Hugging Face causal LM id (used when the transformers library can load it
from a local cache). Low-rank adaptation is implemented here directly:
frozen base weights plus rank-r A/B adapters on every linear projection,
scaled by alpha / r.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import DEFAULTS

BOS = 0
EOS = 1
UNK = 2
_SPECIALS = 3


class CharTokenizer:
    """Character-level tokenizer built from the training corpus."""

    def __init__(self, corpus):
        chars = sorted({ch for line in corpus for ch in line})
        self.id_for = {ch: i + _SPECIALS for i, ch in enumerate(chars)}
        self.char_for = {i: ch for ch, i in self.id_for.items()}

    @property
    def vocab_size(self):
        return _SPECIALS + len(self.id_for)

    def encode(self, text, add_bos=True, add_eos=False):
        ids = [BOS] if add_bos else []
        ids.extend(self.id_for.get(ch, UNK) for ch in text)
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids):
        return "".join(self.char_for.get(i, "") for i in ids if i >= _SPECIALS)

    def to_dict(self):
        return {"chars": "".join(sorted(self.id_for))}


class _Block(nn.Module):
    """Pre-norm causal attention + MLP block with plain Linear projections.

    Projections are explicit nn.Linear modules so the low-rank wrapper can
    target them uniformly.
    """

    def __init__(self, d_model, n_heads, d_ff):
        super().__init__()
        self.n_heads = n_heads
        self.ln1 = nn.LayerNorm(d_model)
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.up = nn.Linear(d_model, d_ff)
        self.down = nn.Linear(d_ff, d_model)

    def forward(self, x):
        b, t, d = x.shape
        h = self.ln1(x)
        hd = d // self.n_heads

        def heads(m):
            return m.view(b, t, self.n_heads, hd).transpose(1, 2)

        q, k, v = heads(self.q(h)), heads(self.k(h)), heads(self.v(h))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(mask, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o(y)
        x = x + self.down(torch.nn.functional.gelu(self.up(self.ln2(x))))
        return x


class TinyCausalLM(nn.Module):
    """A from-scratch causal LM small enough to fine-tune on a laptop CPU."""

    def __init__(self, vocab_size, defaults=DEFAULTS):
        super().__init__()
        d = defaults.builtin_d_model
        self.max_len = defaults.max_sequence_length
        self.tok_emb = nn.Embedding(vocab_size, d)
        self.pos_emb = nn.Embedding(self.max_len, d)
        self.blocks = nn.ModuleList(
            _Block(d, defaults.builtin_heads, defaults.builtin_ff)
            for _ in range(defaults.builtin_layers)
        )
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, vocab_size, bias=False)

    def forward(self, ids):
        b, t = ids.shape
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None, :, :]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable rank-r update, scaled alpha / r."""

    def __init__(self, base, rank_r, alpha):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad = False
        in_features = base.in_features
        out_features = base.out_features
        self.lora_a = nn.Parameter(torch.randn(rank_r, in_features) * 0.01)
        self.lora_b = nn.Parameter(torch.zeros(out_features, rank_r))
        self.scale = alpha / rank_r

    def forward(self, x):
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scale


def apply_low_rank(model, rank_r, alpha):
    """Freeze the model and wrap every nn.Linear in a LoRALinear adapter."""
    for param in model.parameters():
        param.requires_grad = False
    _wrap_linears(model, rank_r, alpha)
    return model


def _wrap_linears(module, rank_r, alpha):
    for name, child in list(module.named_children()):
        if isinstance(child, nn.Linear):
            setattr(module, name, LoRALinear(child, rank_r, alpha))
        elif not isinstance(child, LoRALinear):
            _wrap_linears(child, rank_r, alpha)


class BuiltinModel:
    """Bundles the char tokenizer and tiny transformer behind one interface."""

    newline_stops = True

    def __init__(self, corpus, config, defaults=DEFAULTS):
        torch.manual_seed(defaults.init_seed)
        self.tokenizer = CharTokenizer(corpus)
        self.model = TinyCausalLM(self.tokenizer.vocab_size, defaults)
        if config.mode == "low_rank":
            apply_low_rank(self.model, config.rank_r, config.alpha)

    def encode_line(self, line, max_len):
        return self.tokenizer.encode(line, add_bos=True, add_eos=True)[:max_len]

    def encode_prefix(self, text):
        return self.tokenizer.encode(text, add_bos=True, add_eos=False)

    def decode(self, ids):
        return self.tokenizer.decode(ids)

    @property
    def eos_id(self):
        return EOS

    def trainable_parameters(self):
        return [p for p in self.model.parameters() if p.requires_grad]


class HFModel:
    """A Hugging Face causal LM, used when the id is loadable locally."""

    newline_stops = True

    def __init__(self, corpus, config):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(config.base_model_id)
        if self.tokenizer.pad_token_id is None:
            self.tokenizer.pad_token = self.tokenizer.eos_token
        self.model = AutoModelForCausalLM.from_pretrained(config.base_model_id)
        if config.mode == "low_rank":
            apply_low_rank(self.model, config.rank_r, config.alpha)
        self._newline_id = self.tokenizer.encode("\n", add_special_tokens=False)

    def encode_line(self, line, max_len):
        ids = self.tokenizer.encode(line + "\n", add_special_tokens=False)
        return ids[:max_len]

    def encode_prefix(self, text):
        return self.tokenizer.encode(text, add_special_tokens=False)

    def decode(self, ids):
        return self.tokenizer.decode(ids, skip_special_tokens=True)

    @property
    def eos_id(self):
        return self._newline_id[0] if self._newline_id else self.tokenizer.eos_token_id

    def forward(self, ids):
        return self.model(ids).logits

    def trainable_parameters(self):
        return [p for p in self.model.parameters() if p.requires_grad]


def build_model(corpus, config, defaults=DEFAULTS):
    """Instantiate the backbone named by config.base_model_id.

    Ids starting with "builtin:" select the from-scratch tiny transformer;
    anything else is treated as a Hugging Face model id and raised as a
    training error when it cannot be loaded (for example with no local
    cache and no network).
    """
    if config.base_model_id.startswith("builtin:"):
        return BuiltinModel(corpus, config, defaults)
    try:
        return HFModel(corpus, config)
    except Exception as exc:
        raise RuntimeError(
            f"cannot load base model {config.base_model_id!r}: {exc}; "
            "use base_model_id 'builtin:tiny' for a self-contained model"
        ) from exc


def model_logits(bundle, ids):
    if isinstance(bundle, HFModel):
        return bundle.forward(ids)
    return bundle.model(ids)
