"""Token-level text-image fusion with label- and augmentation-based contrastive learning."""

from .data import Batch, Dataset, Example, SyntheticSpec, Vocab, collate, format_input, load_jsonl, split, synthesize, synthetic_vocab
from .augment import ImageAugmentPolicy, TextAugmenter, augment_batch, back_translate, rand_augment
from .encoders import EncoderConfig, ImageEncoder, TextEncoder
from .fusion import MLFConfig, MultiLayerFusion
from .losses import ClassifierHead, ContrastiveConfig, LossBundle, classification_loss, dbcl_loss, lbcl_loss, total_loss
from .model import CLMLF
from .training import TrainConfig, evaluate, gradient_check, train
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
