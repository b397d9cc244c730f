"""imukit: immunize images against text-guided diffusion editing, at desk scale.

Subpackages
-----------
autodiff        tape-based reverse-mode tensor engine
diffusion       toy text-conditioned denoiser: schedule, model, training, editing
attention_mask  attention aggregation and entropy-threshold masking
attack          the immunization loop and its loss terms
metrics         full-reference image quality metrics
harness         CLI and reproducible experiment orchestration
"""

__version__ = "0.1.0"
