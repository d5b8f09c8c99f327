"""Dataset generation, two-stage training and evaluation."""
from .config import CONFIG_KEYS, TrainConfig, config_from_dict, load_config, resolve_config
from .dataset import Sample, build_dataset, generate_sources, load_dataset, samples_in_memory, split_of
from .evaluate import REPORT_KEYS, evaluate, evaluate_items
from .train import TrainResult, items_of, save_result, train_stage1, train_stage2

__all__ = ["CONFIG_KEYS", "TrainConfig", "config_from_dict", "load_config", "resolve_config", "Sample",
           "build_dataset", "generate_sources", "load_dataset", "samples_in_memory", "split_of",
           "REPORT_KEYS", "evaluate", "evaluate_items", "TrainResult", "items_of", "save_result",
           "train_stage1", "train_stage2"]
