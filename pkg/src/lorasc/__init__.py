"""lorasc: cascaded low-rank adapter fine-tuning, desk scale.

A small laboratory for the full cascade schedule (per-period adapter
experts, slow-fast retention averaging, scale-matched noise injection)
over tiny MLP and transformer backbones, with vanilla-adapter and
chain-cascade baselines, deterministic seeded runs, and checkpoint resume.
"""

__version__ = "0.1.0"
