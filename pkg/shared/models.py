import json
from dataclasses import dataclass, field, fields, asdict, replace
from . import config
from .exceptions import ConfigError


class _Section:
    """Shared dict round-tripping for the config dataclasses."""

    @classmethod
    def from_dict(cls, values):
        values = dict(values or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
        for name, value in values.items():
            if isinstance(value, list):
                values[name] = tuple(value)
        instance = cls(**values)
        instance.validate()
        return instance

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def override(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        updated = replace(self, **changes)
        updated.validate()
        return updated

    def validate(self):
        return self


@dataclass(frozen=True)
class ModelConfig(_Section):
    block_height: int = config.BLOCK_HEIGHT
    block_width: int = config.BLOCK_WIDTH
    channels: int = config.CHANNELS
    embed_dim: int = config.EMBED_DIM
    num_heads: int = config.NUM_HEADS
    num_stacks: int = config.NUM_STACKS
    ffn_hidden: int = 0  # 0 means FFN_MULTIPLIER * embed_dim
    max_seq_len: int = config.MAX_SEQ_LEN
    positional_encoding: bool = False
    seed: int = config.MODEL_SEED

    def __post_init__(self):
        if self.ffn_hidden == 0:
            object.__setattr__(self, 'ffn_hidden', config.FFN_MULTIPLIER * self.embed_dim)

    @classmethod
    def sized(cls, embed_dim, num_stacks, **kwargs):
        """Config for a given embed/stack cell; ffn width follows 4·d unless given."""
        return cls(embed_dim=embed_dim, num_stacks=num_stacks, **kwargs).validate()

    def validate(self):
        if self.embed_dim <= 0 or self.num_heads <= 0:
            raise ConfigError("embed_dim and num_heads must be positive")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if self.num_stacks < 0:
            raise ConfigError("num_stacks must be >= 0")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 (grayscale) or 3 (RGB)")
        if self.block_height < 8 or self.block_width < 8:
            raise ConfigError("blocks must be at least 8x8 to survive three 2x2 pools")
        if self.ffn_hidden <= 0:
            raise ConfigError("ffn_hidden must be positive")
        return self

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads


@dataclass(frozen=True)
class SynthConfig(_Section):
    seed: int = config.SYNTH_SEED
    images: int = config.SYNTH_IMAGES
    words_mean: float = config.WORDS_MEAN
    words_std: float = config.WORDS_STD
    words_min: int = config.WORDS_MIN
    words_max: int = config.WORDS_MAX
    bold_ratio: float = config.BOLD_RATIO
    base_stroke_range: tuple = config.BASE_STROKE_RANGE
    bold_multiplier_range: tuple = config.BOLD_MULTIPLIER_RANGE
    glyph_scale_range: tuple = config.GLYPH_SCALE_RANGE
    glyphs_per_word: tuple = config.GLYPHS_PER_WORD
    views_per_layout: int = config.VIEWS_PER_LAYOUT
    illumination: bool = True
    illumination_strength: float = config.ILLUMINATION_STRENGTH
    noise: bool = True
    noise_sigma: float = config.NOISE_SIGMA
    rotation: bool = True
    max_rotation_deg: float = config.MAX_ROTATION_DEG
    polarity_inversion_prob: float = config.POLARITY_INVERSION_PROB
    split_ratios: dict = field(default_factory=lambda: dict(config.SPLIT_RATIOS))

    @classmethod
    def noiseless(cls, **kwargs):
        """Clean renders: no illumination ramp, no sensor noise, no rotation, no inversion."""
        base = dict(illumination=False, noise=False, rotation=False, polarity_inversion_prob=0.0)
        base.update(kwargs)
        return cls(**base).validate()

    def validate(self):
        if self.images < 1:
            raise ConfigError(f"images must be >= 1, got {self.images}")
        for name in ('base_stroke_range', 'bold_multiplier_range', 'glyph_scale_range', 'glyphs_per_word'):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ConfigError(f"{name} must be a non-empty positive range, got {(lo, hi)}")
        if self.bold_multiplier_range[0] <= 1.0:
            raise ConfigError("bold multiplier must exceed 1")
        if not 1 <= self.words_min <= self.words_max:
            raise ConfigError("words_min/words_max must satisfy 1 <= min <= max")
        if self.words_mean <= 0 or self.words_std < 0:
            raise ConfigError("words_mean must be positive and words_std non-negative")
        if not 0.0 <= self.bold_ratio <= 1.0:
            raise ConfigError("bold_ratio must lie in [0, 1]")
        if not 0.0 <= self.polarity_inversion_prob <= 1.0:
            raise ConfigError("polarity_inversion_prob must lie in [0, 1]")
        if self.views_per_layout < 1:
            raise ConfigError("views_per_layout must be >= 1")
        if set(self.split_ratios) != {'train', 'test', 'val'} or abs(sum(self.split_ratios.values()) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must cover train/test/val and sum to 1")
        return self


@dataclass(frozen=True)
class TrainConfig(_Section):
    epochs: int = config.EPOCHS
    batch_size: int = config.BATCH_SIZE
    learning_rate: float = config.LEARNING_RATE
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    adam_eps: float = config.ADAM_EPS
    loss: str = config.LOSS
    focal_gamma: float = config.FOCAL_GAMMA
    focal_alpha_bold: float = config.FOCAL_ALPHA_BOLD
    clip_norm: float = config.CLIP_NORM
    checkpoint_every: int = config.CHECKPOINT_EVERY
    chunking: str = config.CHUNKING
    seed: int = config.TRAIN_SEED

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.loss not in ('bce', 'focal'):
            raise ConfigError(f"loss must be 'bce' or 'focal', got {self.loss!r}")
        if self.focal_gamma < 0 or not 0.0 < self.focal_alpha_bold < 1.0:
            raise ConfigError("focal_gamma must be >= 0 and focal_alpha_bold in (0, 1)")
        if self.chunking not in ('contiguous', 'random'):
            raise ConfigError("chunking must be 'contiguous' or 'random'")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        return self


@dataclass(frozen=True)
class MorphologyConfig(_Section):
    alpha: float = config.ALPHA
    alpha_grid: tuple = config.ALPHA_GRID
    sigma_mode: str = config.SIGMA_MODE

    def validate(self):
        if self.sigma_mode not in ('pooled', 'word_means'):
            raise ConfigError("sigma_mode must be 'pooled' or 'word_means'")
        return self


@dataclass(frozen=True)
class EvalConfig(_Section):
    bucket_edges: tuple = config.BOLD_RATIO_BUCKETS
    embed_dims: tuple = config.ABLATION_EMBED_DIMS
    stacks: tuple = config.ABLATION_STACKS

    def validate(self):
        edges = list(self.bucket_edges)
        if len(edges) < 2 or edges != sorted(edges) or edges[0] != 0.0 or edges[-1] != 1.0:
            raise ConfigError("bucket_edges must ascend from 0.0 to 1.0")
        return self


SECTIONS = {
    'model': ModelConfig,
    'synth': SynthConfig,
    'train': TrainConfig,
    'morphology': MorphologyConfig,
    'eval': EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    """Every config section of one invocation; the JSON config file mirrors this layout."""
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, values):
        if not isinstance(values, dict):
            raise ConfigError("Config file must hold a JSON object")
        unknown = sorted(set(values) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config sections: {', '.join(unknown)}")
        return cls(**{name: SECTIONS[name].from_dict(values.get(name)) for name in SECTIONS})

    @classmethod
    def from_file(cls, path):
        if path is None:
            return cls()
        try:
            with open(path, encoding='utf-8') as fh:
                values = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(values)

    def override(self, section, **changes):
        """Copy with CLI values (None means 'not given') applied to one section."""
        return replace(self, **{section: getattr(self, section).override(**changes)})

    def to_dict(self):
        return {name: getattr(self, name).to_dict() for name in SECTIONS}
