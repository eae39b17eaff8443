"""Single-file model serialization.

Layout: a UTF-8 text header of ``key=value`` lines terminated by an empty
line, followed by little-endian float64 arrays in the order
phi (K x V), theta (D x K), gamma (df x K-1), sigma (K-1 x K-1),
knots (n_knots) and elbo (n_elbo).
"""
from __future__ import annotations

import json

import numpy as np

from ..errors import DataError
from .stm import TopicModel

MAGIC = "NEWSPULSE-TOPICS 1"
_LE = "<f8"


def save_model(model: TopicModel, path):
    header = {
        "K": model.K, "V": model.V, "D": model.D, "df": model.df, "seed": model.seed,
        "n_knots": len(model.knots), "n_elbo": len(model.elbo_trace),
        "converged": int(model.converged), "terms": json.dumps(list(model.terms)),
    }
    with open(path, "wb") as fh:
        fh.write((MAGIC + "\n").encode())
        for k, v in header.items():
            fh.write(f"{k}={v}\n".encode("utf-8"))
        fh.write(b"\n")
        for arr in (model.phi, model.theta, model.gamma, model.sigma, model.knots, model.elbo_trace):
            fh.write(np.ascontiguousarray(arr, dtype=_LE).tobytes())


def load_model(path) -> TopicModel:
    with open(path, "rb") as fh:
        if fh.readline().decode().strip() != MAGIC:
            raise DataError(f"{path} is not a topic model file")
        header = {}
        while True:
            line = fh.readline().decode("utf-8")
            if line in ("\n", ""):
                break
            k, v = line.rstrip("\n").split("=", 1)
            header[k] = v
        K, V, D, df = (int(header[k]) for k in ("K", "V", "D", "df"))
        shapes = [(K, V), (D, K), (df, K - 1), (K - 1, K - 1), (int(header["n_knots"]),), (int(header["n_elbo"]),)]
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise DataError(f"{path} is truncated")
            arrays.append(np.frombuffer(buf, dtype=_LE).reshape(shape).astype(float))
    phi, theta, gamma, sigma, knots, elbo = arrays
    return TopicModel(K=K, phi=phi, theta=theta, gamma=gamma, sigma=sigma, elbo_trace=elbo,
                      terms=tuple(json.loads(header["terms"])), knots=knots, seed=int(header["seed"]),
                      converged=bool(int(header["converged"])))
