"""Minimal numpy neural-network core: layers, losses, optimizers, checkpoints."""

from scdgcn.nn.checkpoint import load_checkpoint, save_checkpoint
from scdgcn.nn.layers import (Conv2D, Dense, Dropout, Flatten, GlobalAvgPool, Layer, MaxPool,
                              ReLU, Softmax, softmax)
from scdgcn.nn.losses import masked_cross_entropy, mse_loss
from scdgcn.nn.model import ForwardCache, Sequential
from scdgcn.nn.optim import AMSGrad, Adam

__all__ = [
    "AMSGrad", "Adam", "Conv2D", "Dense", "Dropout", "Flatten", "ForwardCache", "GlobalAvgPool",
    "Layer", "MaxPool", "ReLU", "Sequential", "Softmax", "load_checkpoint", "masked_cross_entropy",
    "mse_loss", "save_checkpoint", "softmax",
]
