"""Decision-Transformer battery dispatch with knowledge distillation.

Subpackages: ``autodiff`` (tensor engine), ``data`` (series ingest),
``env`` (battery environment), ``baselines`` (rule/DDPG/dataset),
``oracle`` (perfect-foresight DP), ``dt`` (Decision Transformer),
``distill`` (teacher -> student), ``bench`` (experiment harness).
"""

__version__ = "0.1.0"
