"""Trust-region policy optimization with a cylindrical boundary constraint.

Modules:

* ``autodiff`` and ``nn``: tape-based differentiation, MLP Gaussian policies, Fisher products
* ``geometry``: the cylindrical boundary and its penalty cost
* ``env``: a kinematic point-grasper relocation task
* ``estimation``: returns and GAE for rewards and costs
* ``optim``: TRPO, reward-penalized TRPO and CPO updates
* ``harness``: demonstrations, behavior cloning, training, sweeps, evaluation
"""

__version__ = "0.1.0"
