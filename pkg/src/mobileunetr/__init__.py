"""MobileUNETR: hybrid CNN-Transformer segmentation on a numpy autodiff engine."""
