from src.engine.functional import cross_entropy, softmax
from src.engine.model import ModelInstance, instantiate
from src.engine.optim import SGD, AdamW, make_optimizer
