"""Smooth adversarial perturbations for single-lead ECG classifiers."""

from smoothadv.data import Dataset, LabeledExample, RhythmClass, Signal
from smoothadv.kernels import GaussianKernel, KernelBank, bank_smooth, convolve_same, gaussian_kernel
from smoothadv.nn import Classifier, ModelSpec, default_spec

__version__ = "0.1.0"

__all__ = [
    "Classifier",
    "Dataset",
    "GaussianKernel",
    "KernelBank",
    "LabeledExample",
    "ModelSpec",
    "RhythmClass",
    "Signal",
    "bank_smooth",
    "convolve_same",
    "default_spec",
    "gaussian_kernel",
]
