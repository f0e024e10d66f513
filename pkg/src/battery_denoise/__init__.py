"""Unscented Kalman filter denoising of battery voltage and SOC logs."""

__version__ = "0.1.0"
