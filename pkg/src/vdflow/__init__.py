"""Surrogate flow maps for non-autonomous vehicle dynamics.

Two complementary surrogates for the one-step evolution of controlled
vehicle models (unicycle, slip-free bicycle, slip-based bicycle):

* linear operators in a lifted observable space, fitted per parameter
  point and interpolated on the Grassmann / matrix manifolds
  (:mod:`vdflow.drips`);
* a residual flow-map network trained on one-step pairs, with a
  layer-freezing transfer-learning correction (:mod:`vdflow.fml`).

Control signals are reduced to per-step coefficient vectors by
:mod:`vdflow.localparam`, datasets are built by :mod:`vdflow.datagen`,
and :mod:`vdflow.harness` wires everything into reproducible
experiments.
"""

__version__ = "0.1.0"
