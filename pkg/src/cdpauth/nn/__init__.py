from cdpauth.nn.layers import (
    Conv2d, Dense, GlobalAvgPool, Head, MaxPool2d, ReLU, ResidualBlock, ShapeError, Sigmoid,
)
from cdpauth.nn.model import Model, check_spec, default_spec
from cdpauth.nn.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam", "AdamState", "Conv2d", "Dense", "GlobalAvgPool", "Head", "MaxPool2d", "Model",
    "ReLU", "ResidualBlock", "ShapeError", "Sigmoid", "adam_step", "check_spec", "default_spec",
]
