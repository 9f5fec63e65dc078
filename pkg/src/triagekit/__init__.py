"""Desk-scale casualty-triage pipeline.

Modules: vitalgen (synthetic vital-sign corpora), cvae (conditional VAE
sensor augmentation), tracksync (detection resynchronization and clip
alignment), fusion (late-fusion action classifier with ablation and
Grad-CAM), gateway (streaming replay server with an operator decision log),
scenarios (synthetic scenes with ground truth), cli (pipeline entry point).
"""

__version__ = "0.1.0"
