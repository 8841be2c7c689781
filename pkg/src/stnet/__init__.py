"""Set-algebra transport onto learned latent spaces.

Modules, bottom-up: ``algebra`` (terms, laws, rewriting), ``mirrored``
(candidate operations on R^l and law checks), ``diffcore`` (autodiff and
Adam), ``setgen`` (random planar sets), ``embed`` (grid autoencoder),
``transport`` (invertible phi and baselines), ``harness`` (metrics,
experiments, reports) and ``cli``.
"""

__version__ = "0.1.0"
