"""Shared constructors for the test suite."""
from nsmc.cli import random_control

OMEGA = (0.25, 0.75, 0.25, 0.75)
SMALL_REF = [(1, 0.375, 0.375, 1.5), (2, 0.625, 0.625, -1.5)]


def rand_u(grid, params, rng, total=0.5, atoms=2):
    return random_control(grid, params.nt, params.dt, rng, total, atoms)
