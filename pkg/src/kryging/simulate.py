"""Synthetic dataset generation on a lattice.

Draws a zero-mean stationary field by circulant embedding, adds the
constant mean and Gaussian nugget noise, and optionally thins to an
irregular point set. All randomness flows from one seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .grid import GridSpec, MaternSpec, ThetaParams
from .toeplitz import BttbOperator

__all__ = ["SimulatedField", "simulate_dataset"]


@dataclass
class SimulatedField:
    """A simulated realization: the full lattice truth plus the observed
    (possibly thinned) dataset."""

    grid: GridSpec
    theta: ThetaParams
    x: np.ndarray  # latent field on the full lattice
    y: np.ndarray  # noisy observations on the full lattice
    dataset: Dataset  # observed rows (thinned when requested)
    kept: np.ndarray  # lattice indices retained in the dataset


def simulate_dataset(
    grid: GridSpec,
    theta: ThetaParams,
    seed: int = 0,
    thin_fraction: float = 0.0,
) -> SimulatedField:
    """Simulate observations y = beta + x + noise on ``grid``.

    The latent field x is an exact draw from the stationary model via
    circulant embedding. With ``thin_fraction`` t > 0, a uniformly random
    (1 - t) share of the lattice rows is kept, producing an irregularly
    spaced dataset relative to any coarser modeling grid.
    """
    if not 0.0 <= thin_fraction < 1.0:
        raise ValueError("thin_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    op = BttbOperator.from_matern(grid, MaternSpec(1.0, theta.rho, theta.nu))
    x = np.sqrt(theta.sigma2) * op.sample(rng)
    noise = np.sqrt(theta.tau2) * rng.standard_normal(grid.n)
    y = theta.beta[0] + x + noise

    if thin_fraction > 0.0:
        keep = round(grid.n * (1.0 - thin_fraction))
        kept = np.sort(rng.choice(grid.n, size=keep, replace=False))
    else:
        kept = np.arange(grid.n)

    coords = grid.node_coords()
    dataset = Dataset(
        locations=coords[kept],
        y=y[kept],
        X=np.ones((kept.size, 1)),
        covariate_names=("intercept",),
    )
    return SimulatedField(grid=grid, theta=theta, x=x, y=y, dataset=dataset, kept=kept)
