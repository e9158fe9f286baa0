import time

import numpy as np
import pytest

from latent_sensing import pipeline as pl
from latent_sensing.jmvae import JmvaeConfig, init_jmvae
from latent_sensing.nnkit import RngStream


def zero_heads(model):
    """Zero the output layer of every net: encoders emit the prior, decoders emit 0."""
    for net in model.nets().values():
        net.layers[-1].weight[...] = 0.0
        net.layers[-1].bias[...] = 0.0
    return model


@pytest.fixture
def zero_model():
    return zero_heads(init_jmvae(JmvaeConfig(), RngStream(0)))


@pytest.fixture(scope="session")
def default_cfg():
    return pl.RunConfig()


@pytest.fixture(scope="session")
def train_data(default_cfg):
    return pl.make_dataset(default_cfg)


def timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


TIMINGS = {}


@pytest.fixture(scope="session")
def trained_vae(default_cfg, train_data):
    out, TIMINGS["vae"] = timed(pl.train_vae, default_cfg, train_data)
    return out


@pytest.fixture(scope="session")
def joint_centroids(model, train_data):
    from latent_sensing.jmvae import encode_joint

    labels, xs, ws = train_data
    return class_centroids(encode_joint(model, xs, ws).mu, labels)


@pytest.fixture(scope="session")
def model(trained_vae):
    return trained_vae[0]


@pytest.fixture(scope="session")
def heldout(default_cfg):
    return pl.heldout_dataset(default_cfg)


@pytest.fixture(scope="session")
def trained_q(default_cfg, model):
    out = {}
    for m in ("x", "w"):
        out[m], TIMINGS[f"dqn-{m}"] = timed(pl.train_q, default_cfg, model, m)
    return out


def class_centroids(mu, labels):
    return {c: mu[labels == c].mean(axis=0) for c in (1, 2, 3)}


def nearest_centroid(mu, centroids):
    keys = sorted(centroids)
    d = np.stack([np.linalg.norm(mu - centroids[c], axis=-1) for c in keys], axis=-1)
    return np.array(keys)[np.argmin(d, axis=-1)]
