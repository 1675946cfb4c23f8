import numpy as np
import pytest

from maic.data_model import AgdArm, AgdStudy, IpdStudy, OutcomeKind


def make_ipd(y, z, x, names=None, outcome_kind=OutcomeKind.CONTINUOUS):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != len(y):
        x = x.T
    if names is None:
        names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
    return IpdStudy(np.asarray(y, float), np.asarray(z, int), x, names, outcome_kind)


def make_arm(n=100, y_mean=0.5, y_var=0.25, x_mean=(0.0,), x_var=None):
    return AgdArm(n=n, y_mean=y_mean, y_var=y_var,
                  x_mean=np.asarray(x_mean, float),
                  x_var=None if x_var is None else np.asarray(x_var, float))


def make_agd(active=None, comparator=None, names=("x1",)):
    if active is None:
        active = make_arm(x_mean=[0.0] * len(names))
    return AgdStudy(active, comparator, tuple(names))


@pytest.fixture
def rng():
    return np.random.default_rng(42)
