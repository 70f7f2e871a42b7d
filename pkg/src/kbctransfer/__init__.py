"""Knowledge base completion with GRU name encoders and transfer from pre-trained checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint
from .data import (ClusterMap, TripleStore, add_reciprocals, build_store, load_clusters, load_dataset,
                   load_triples, load_word_vectors)
from .evaluation import RankReport, evaluate, metrics, zero_shot
from .model import KBCModel, build_model
from .training import TrainConfig, TrainReport, grid_search, train
from .transfer import init_finetune_gru, init_finetune_noencoder, transfer_shared_params

__version__ = "0.1.0"
