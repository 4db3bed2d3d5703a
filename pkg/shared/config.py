# Model geometry (blocks keep a 3:4 width:height aspect ratio)
BLOCK_HEIGHT = 128
BLOCK_WIDTH = 96
CHANNELS = 1
EMBED_DIM = 64
NUM_HEADS = 4
NUM_STACKS = 4
FFN_MULTIPLIER = 4
MAX_SEQ_LEN = 100
CONV_CHANNELS = (8, 16, 32)
LAYER_NORM_EPS = 1e-5
PROB_CLAMP = 1e-12
AGGREGATION_THRESHOLD = 0.5
MODEL_SEED = 0

# Synthetic dataset
SYNTH_SEED = 42
SYNTH_IMAGES = 200
WORDS_MEAN = 32.0
WORDS_STD = 42.0
WORDS_MIN = 1
WORDS_MAX = 701
BOLD_RATIO = 0.10
BOLD_RATIO_CONCENTRATION = 10.0
BASE_STROKE_RANGE = (1.0, 4.0)
BOLD_MULTIPLIER_RANGE = (1.4, 2.2)
GLYPH_SCALE_RANGE = (2.0, 2.0)
GLYPHS_PER_WORD = (3, 10)
VIEWS_PER_LAYOUT = 1
ILLUMINATION_STRENGTH = 0.35
NOISE_SIGMA = 6.0
MAX_ROTATION_DEG = 8.0
POLARITY_INVERSION_PROB = 0.2
MIN_CONTRAST = 90.0
PAGE_WIDTH = 1024
PAGE_MARGIN = 16
SPLIT_RATIOS = {'train': 0.80, 'test': 0.15, 'val': 0.05}

# Rock-paper-scissors context task
RPS_GAMES = 2400
RPS_HANDS = ('rock', 'paper', 'scissors')
RPS_STROKE_RANGE = (3.0, 7.0)
RPS_MAX_ROTATION_DEG = 12.0

# Training
EPOCHS = 10
BATCH_SIZE = 4
LEARNING_RATE = 3e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LOSS = 'focal'
FOCAL_GAMMA = 2.0
FOCAL_ALPHA_BOLD = 0.75
CLIP_NORM = 1.0
CHECKPOINT_EVERY = 0
TRAIN_SEED = 0
CHUNKING = 'contiguous'

# Letter morphology voting
ALPHA = 1.0
ALPHA_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
SIGMA_MODE = 'pooled'

# Evaluation
BOLD_RATIO_BUCKETS = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0)
ABLATION_EMBED_DIMS = (32, 64, 128, 256)
ABLATION_STACKS = (2, 3, 4, 5)

# Annotation colours (RGB)
BOLD_COLOR = (0, 0, 255)
NON_BOLD_COLOR = (0, 255, 0)
ANNOTATION_STROKE = 2

# File names
MANIFEST_NAME = 'manifest.json'
RPS_MANIFEST_NAME = 'rps_manifest.json'
RUN_MANIFEST_NAME = 'run_manifest.json'
TRAIN_LOG_NAME = 'train_log.jsonl'
MODEL_FILE_NAME = 'model.cnsnt'
