"""Python access to the V-CEM lab: training, metrics and the inference service."""

import json

from . import _core
from ._core import ConfigError, crc, noise_blend

__all__ = ["ConfigError", "Service", "crc", "default_config", "load_dataset", "noise_blend", "train", "version"]

__version__ = _core.version()


def version():
    return _core.version()


def default_config():
    return json.loads(_core.default_config())


def load_dataset(descriptor, seed=0):
    """Materialize a dataset descriptor, e.g. {"kind": "synthetic", "rule": "parity"}."""
    return _core.load_dataset(json.dumps(descriptor), seed)


def train(config=None, seed=0, out=None):
    """Train one model; `config` is a partial config dict merged over the defaults.

    With `out`, the model directory, history.csv and report.json are written there
    in the same layout as `vcem train`. Returns the run summary.
    """
    return json.loads(_core.train(json.dumps(config or {}), seed, str(out) if out else ""))


class Service:
    """In-process version of the HTTP service; methods return (status, payload)."""

    def __init__(self, model_dir):
        self._s = _core.Service(str(model_dir))

    def request(self, method, path, body=None, query=None):
        status, payload = self._s.handle(
            method, path, "" if body is None else json.dumps(body), {k: str(v) for k, v in (query or {}).items()}
        )
        return status, json.loads(payload)

    def meta(self):
        return self.request("GET", "/meta")

    def samples(self, offset=0, limit=20):
        return self.request("GET", "/samples", query={"offset": offset, "limit": limit})

    def predict(self, sample_index):
        return self.request("POST", "/predict", {"sample_index": sample_index})

    def intervene(self, sample_index, overrides=None, theta=0.0, seed=0):
        body = {
            "sample_index": sample_index,
            "overrides": {str(j): int(v) for j, v in (overrides or {}).items()},
            "theta": theta,
            "seed": seed,
        }
        return self.request("POST", "/intervene", body)
