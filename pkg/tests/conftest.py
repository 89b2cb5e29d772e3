import numpy as np
import pytest

from bopdp import space as sp


@pytest.fixture(scope="session")
def figure_a_space() -> sp.SearchSpace:
    """Hierarchical demo space: a global PCA size, an algorithm choice, and
    per-algorithm children (SVM: C, kernel, sigma; xgboost: eta, nrounds)."""
    return sp.SearchSpace([
        sp.ParamDef(name="k", kind=sp.INTEGER, lower=1, upper=10),
        sp.ParamDef(name="algorithm", kind=sp.CATEGORICAL, levels=("svm", "xgboost")),
        sp.ParamDef(name="C", kind=sp.CONTINUOUS, lower=0.1, upper=10.0,
                    condition=sp.Condition("algorithm", frozenset({"svm"}))),
        sp.ParamDef(name="kernel", kind=sp.CATEGORICAL, levels=("linear", "rbf"),
                    condition=sp.Condition("algorithm", frozenset({"svm"}))),
        sp.ParamDef(name="sigma", kind=sp.CONTINUOUS, lower=0.01, upper=1.0,
                    log_scale=True,
                    condition=sp.Condition("kernel", frozenset({"rbf"}))),
        sp.ParamDef(name="eta", kind=sp.CONTINUOUS, lower=0.001, upper=0.3,
                    log_scale=True,
                    condition=sp.Condition("algorithm", frozenset({"xgboost"}))),
        sp.ParamDef(name="nrounds", kind=sp.INTEGER, lower=50, upper=500,
                    condition=sp.Condition("algorithm", frozenset({"xgboost"}))),
    ])


def xgboost_config(k=2, eta=0.01, nrounds=100) -> sp.Config:
    return sp.Config({
        "k": k, "algorithm": "xgboost", "C": sp.INACTIVE, "kernel": sp.INACTIVE,
        "sigma": sp.INACTIVE, "eta": eta, "nrounds": nrounds,
    })


def svm_config(k=3, c=1.0, kernel="linear", sigma=None) -> sp.Config:
    return sp.Config({
        "k": k, "algorithm": "svm", "C": c, "kernel": kernel,
        "sigma": sp.INACTIVE if sigma is None else sigma,
        "eta": sp.INACTIVE, "nrounds": sp.INACTIVE,
    })


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
