"""optlab: a desk-scale laboratory for Adam-family optimizers.

Submodules:
  optim      the optimizer family (quotient, product, blended) and schedules
  landscape  2-parameter test surfaces and the trajectory runner
  nn         a small hand-backpropagated classifier and synthetic datasets
  analysis   Hessian/flatness measurement (HVP, power iteration, Hutchinson)
  escape     barrier potentials and escape-time Monte Carlo
  cli        the `optlab run` entry point
"""

__version__ = "0.1.0"
