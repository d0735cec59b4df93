"""From-scratch 3D CNN for bottleneck regression."""
from .layers import (Conv3D, Dense, Dropout, Flatten, MaxPool3D, ReLU, cross_entropy_loss, loss,
                     mse_loss, softmax)
from .network import (PUBLISHED_PARAMETER_COUNT, AdamConfig, ArchConfig, Network, adam_step,
                      build_network, build_pretext_network, count_parameters, layer_summary,
                      load_weights, save_weights, transfer)
from .pretext import CLASSES, pretrain_pretext, shape_dataset
from .train import TrainConfig, epochs_to_threshold, evaluate, train
from .predict import descriptor_side, predict_bottlenecks
