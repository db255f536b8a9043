"""Hierarchical transformer document encoder with masked-sentence pre-training
and an extractive sentence-labelling summarizer, written on numpy."""
from .encoder import ModelConfig, init_params
from .pretrain import PretrainConfig, Stage, pretrain_run, select_and_mask
from .rouge import oracle_greedy, rouge_all
from .summarizer import FinetuneConfig, LabeledDocument, finetune, rank_and_select
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["FinetuneConfig", "LabeledDocument", "ModelConfig", "PretrainConfig", "Stage", "Tensor",
           "finetune", "init_params", "oracle_greedy", "pretrain_run", "rank_and_select",
           "rouge_all", "select_and_mask"]
