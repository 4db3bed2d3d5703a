"""
The CONSENT network: a small conv feature extractor applied to every block
(phi), a stack of post-norm self-attention encoders mixing the blocks of one
image (gamma), and a per-element linear + softmax head (psi).
"""
import math
from collections import OrderedDict

import numpy as np

from shared import config
from shared.exceptions import DimensionError, ModelFormatError
from shared.models import ModelConfig
from . import autodiff as ad

# Blocks per conv call; a block's features do not depend on this.
PHI_CHUNK = 32


def sinusoidal_table(length, dim):
    position = np.arange(length)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(position * rate)
    table[:, 1::2] = np.cos(position * rate[:dim // 2])
    return table


def parameter_shapes(cfg):
    """Ordered (name, shape, fan_in) for every trainable tensor of a config."""
    shapes = []
    channels = (cfg.channels,) + tuple(config.CONV_CHANNELS)
    for i in range(len(config.CONV_CHANNELS)):
        fan_in = channels[i] * 9
        shapes.append((f'phi.conv{i + 1}.weight', (channels[i + 1], channels[i], 3, 3), fan_in))
        shapes.append((f'phi.conv{i + 1}.bias', (channels[i + 1],), None))
    shapes.append(('phi.proj.weight', (channels[-1], cfg.embed_dim), channels[-1]))
    shapes.append(('phi.proj.bias', (cfg.embed_dim,), None))
    d, f = cfg.embed_dim, cfg.ffn_hidden
    for t in range(cfg.num_stacks):
        for proj in ('q', 'k', 'v', 'o'):
            shapes.append((f'gamma.{t}.attn.{proj}.weight', (d, d), d))
            shapes.append((f'gamma.{t}.attn.{proj}.bias', (d,), None))
        shapes.append((f'gamma.{t}.norm1.gain', (d,), 'ones'))
        shapes.append((f'gamma.{t}.norm1.bias', (d,), None))
        shapes.append((f'gamma.{t}.ffn.fc1.weight', (d, f), d))
        shapes.append((f'gamma.{t}.ffn.fc1.bias', (f,), None))
        shapes.append((f'gamma.{t}.ffn.fc2.weight', (f, d), f))
        shapes.append((f'gamma.{t}.ffn.fc2.bias', (d,), None))
        shapes.append((f'gamma.{t}.norm2.gain', (d,), 'ones'))
        shapes.append((f'gamma.{t}.norm2.bias', (d,), None))
    shapes.append(('psi.weight', (d, 2), d))
    shapes.append(('psi.bias', (2,), None))
    return shapes


class ConsentModel:
    def __init__(self, cfg, params):
        self.config = cfg.validate()
        expected = [name for name, _, _ in parameter_shapes(cfg)]
        missing = [n for n in expected if n not in params]
        if missing:
            raise ModelFormatError(f"Missing parameters: {missing[:5]}")
        self.params = OrderedDict((n, params[n]) for n in expected)
        for name, shape, _ in parameter_shapes(cfg):
            if self.params[name].shape != shape:
                raise ModelFormatError(f"Parameter {name} has shape {self.params[name].shape}, expected {shape}")
        self.positional = None
        if cfg.positional_encoding:
            self.positional = ad.Tensor(sinusoidal_table(cfg.max_seq_len, cfg.embed_dim), name='phi.positional')

    @classmethod
    def initialize(cls, cfg=None, seed=None):
        """uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases, unit norm gains."""
        cfg = (cfg or ModelConfig()).validate()
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        params = {}
        for name, shape, fan_in in parameter_shapes(cfg):
            if fan_in is None:
                data = np.zeros(shape)
            elif fan_in == 'ones':
                data = np.ones(shape)
            else:
                bound = math.sqrt(1.0 / fan_in)
                data = rng.uniform(-bound, bound, size=shape)
            params[name] = ad.Tensor.parameter(data, name=name)
        return cls(cfg, params)

    def parameters(self):
        return self.params

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def state(self):
        """name -> array, including the non-trainable positional table when enabled."""
        state = OrderedDict((n, p.data) for n, p in self.params.items())
        if self.positional is not None:
            state['phi.positional'] = self.positional.data
        return state

    def copy(self):
        params = {n: ad.Tensor.parameter(p.data.copy(), name=n) for n, p in self.params.items()}
        return ConsentModel(self.config, params)

    def _p(self, name):
        return self.params[name]

    # --- phi ------------------------------------------------------------------

    def _phi(self, blocks):
        x = ad.Tensor(blocks)
        for i in range(len(config.CONV_CHANNELS)):
            x = ad.conv2d(x, self._p(f'phi.conv{i + 1}.weight'), self._p(f'phi.conv{i + 1}.bias'))
            x = ad.max_pool2d(ad.relu(x), 2)
        pooled = ad.tensor_mean(x, axis=(2, 3))
        return ad.linear(pooled, self._p('phi.proj.weight'), self._p('phi.proj.bias'))

    def extract_features(self, blocks, mask):
        """[B, S, C, H, W] blocks -> [B, S, d] embeddings; masked positions are zero."""
        blocks = np.asarray(blocks, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        cfg = self.config
        if blocks.ndim != 5 or blocks.shape[2:] != (cfg.channels, cfg.block_height, cfg.block_width):
            raise DimensionError(
                f"blocks {blocks.shape} do not match [B, S, {cfg.channels}, {cfg.block_height}, {cfg.block_width}]")
        if mask.shape != blocks.shape[:2]:
            raise DimensionError(f"mask {mask.shape} does not match blocks {blocks.shape[:2]}")
        b, s = mask.shape
        if s > cfg.max_seq_len:
            raise DimensionError(f"sequence length {s} exceeds max_seq_len {cfg.max_seq_len}")
        flat = blocks.reshape((b * s,) + blocks.shape[2:])
        real = np.flatnonzero(mask.reshape(-1))
        chunks = [self._phi(flat[real[i:i + PHI_CHUNK]]) for i in range(0, len(real), PHI_CHUNK)]
        if chunks:
            features = chunks[0] if len(chunks) == 1 else ad.concat(chunks, axis=0)
            embedded = ad.scatter_rows(features, real, b * s)
        else:
            embedded = ad.Tensor(np.zeros((b * s, cfg.embed_dim)))
        embedded = ad.reshape(embedded, (b, s, cfg.embed_dim))
        if self.positional is not None:
            table = np.broadcast_to(self.positional.data[:s], (b, s, cfg.embed_dim)) * mask[..., None]
            embedded = ad.add(embedded, ad.Tensor(table))
        return embedded

    # --- gamma ----------------------------------------------------------------

    def _attention(self, x, mask, t, attention=None):
        cfg = self.config
        b, s, d = x.shape
        heads, dh = cfg.num_heads, cfg.head_dim

        def project(name):
            y = ad.linear(x, self._p(f'gamma.{t}.attn.{name}.weight'), self._p(f'gamma.{t}.attn.{name}.bias'))
            return ad.transpose(ad.reshape(y, (b, s, heads, dh)), (0, 2, 1, 3))

        q, k, v = project('q'), project('k'), project('v')
        logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        weights = ad.softmax(logits, axis=-1, mask=mask[:, None, None, :])
        if attention is not None:
            attention.append(weights.data)
        context = ad.reshape(ad.transpose(ad.weighted_sum(weights, v), (0, 2, 1, 3)), (b, s, d))
        out = ad.linear(context, self._p(f'gamma.{t}.attn.o.weight'), self._p(f'gamma.{t}.attn.o.bias'))
        return ad.mul(out, self._row_mask(mask, d))

    @staticmethod
    def _row_mask(mask, width):
        return ad.Tensor(np.repeat(mask[..., None], width, axis=-1).astype(np.float64))

    def encode(self, embeddings, mask, attention=None):
        """
        T post-norm encoder stacks; no positional information unless configured.
        Attention weights of each stack are appended to ``attention`` when a list is given.
        """
        mask = np.asarray(mask, dtype=bool)
        if embeddings.shape[-1] != self.config.embed_dim:
            raise DimensionError(f"embeddings width {embeddings.shape[-1]} != embed_dim {self.config.embed_dim}")
        if not mask.any(axis=1).all():
            raise DimensionError("every sequence needs at least one real element")
        x = embeddings
        row_mask = self._row_mask(mask, self.config.embed_dim)
        eps = config.LAYER_NORM_EPS
        for t in range(self.config.num_stacks):
            x = ad.layer_norm(ad.add(x, self._attention(x, mask, t, attention)),
                              self._p(f'gamma.{t}.norm1.gain'), self._p(f'gamma.{t}.norm1.bias'), eps)
            hidden = ad.relu(ad.linear(x, self._p(f'gamma.{t}.ffn.fc1.weight'), self._p(f'gamma.{t}.ffn.fc1.bias')))
            ffn = ad.linear(hidden, self._p(f'gamma.{t}.ffn.fc2.weight'), self._p(f'gamma.{t}.ffn.fc2.bias'))
            x = ad.layer_norm(ad.add(x, ffn), self._p(f'gamma.{t}.norm2.gain'), self._p(f'gamma.{t}.norm2.bias'), eps)
            x = ad.mul(x, row_mask)
        return x

    # --- psi ------------------------------------------------------------------

    def logits(self, encoded):
        return ad.linear(encoded, self._p('psi.weight'), self._p('psi.bias'))

    def decode(self, encoded):
        """[..., d] -> [..., 2] class probabilities; column 1 is P(bold)."""
        if encoded.shape[-1] != self.config.embed_dim:
            raise DimensionError(f"decode expects width {self.config.embed_dim}, got {encoded.shape[-1]}")
        return ad.softmax(self.logits(encoded), axis=-1)

    def forward(self, blocks, mask):
        return self.decode(self.encode(self.extract_features(blocks, mask), mask))

    def attention_maps(self, blocks, mask):
        """Per-stack attention weights [B, heads, S, S] of one forward pass."""
        maps = []
        self.encode(self.extract_features(blocks, mask), mask, maps)
        return maps

    def predict(self, batch):
        """P(bold) per element of a SequenceBatch as a plain array [B, S]."""
        return self.forward(batch.blocks, batch.mask).data[..., 1]


def save_model(model, path):
    from consent.services.storage import write_model_file
    write_model_file(path, model.config, model.state())


def load_model(path):
    from consent.services.storage import read_model_file
    cfg, tensors = read_model_file(path)
    positional = tensors.pop('phi.positional', None)
    cfg = ModelConfig(**{**cfg.to_dict(), 'positional_encoding': positional is not None})
    known = {name for name, _, _ in parameter_shapes(cfg)}
    extra = sorted(set(tensors) - known)
    if extra:
        raise ModelFormatError(f"Unexpected tensors in model file: {extra[:5]}")
    params = {name: ad.Tensor.parameter(data, name=name) for name, data in tensors.items()}
    model = ConsentModel(cfg, params)
    if positional is not None:
        model.positional = ad.Tensor(positional, name='phi.positional')
    return model
