"""Unit helpers. Frequencies are angular (rad/us) internally, time in us."""

import numpy as np
from scipy import constants as sc

TWO_PI = 2.0 * np.pi

HBAR = sc.hbar
AMU = sc.physical_constants["atomic mass constant"][0]
# 40Ca+ : neutral atomic mass minus one electron
CA40_MASS = 39.962590863 * AMU - sc.m_e


def mhz(f):
    """2pi*MHz -> rad/us."""
    return TWO_PI * np.asarray(f, dtype=float) if np.ndim(f) else TWO_PI * float(f)


def to_mhz(w):
    """rad/us -> 2pi*MHz."""
    return np.asarray(w, dtype=float) / TWO_PI if np.ndim(w) else float(w) / TWO_PI
