"""Desk-scale head-shape estimation from 2D landmarks.

Differentiable blendshape + skinning head model, ring-consistency training
on identity-labelled landmark observations, and a scan-to-mesh benchmark
protocol, all on synthetic data.
"""

__version__ = "0.1.0"
