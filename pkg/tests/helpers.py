"""Shared builders for the test suite."""

import numpy as np

from impmpm.constitutive import model_for
from impmpm.core import MaterialParams, ParticleSet, build_grid


def random_particles(n, rng, lo=0.3, hi=0.7, material=None, stretch=0.0):
    material = material or MaterialParams(density=1000.0, youngs=1e4, poisson=0.3)
    ps = ParticleSet.at_rest(rng.uniform(lo, hi, size=(n, 3)), 1e-4, material.density)
    ps.mass *= rng.uniform(0.5, 1.5, size=n)
    ps.velocity = rng.normal(size=(n, 3))
    if stretch:
        ps.F = ps.F + stretch * rng.normal(size=(n, 3, 3))
    return ps


def small_grid(resolution=8, grid_lim=1.0):
    return build_grid(grid_lim=grid_lim, resolution=resolution)


def neo_hookean(youngs=1e4, poisson=0.3):
    return model_for(MaterialParams(density=1000.0, youngs=youngs, poisson=poisson))
