"""JSON serialization of model parameters and fit results."""

import json

import numpy as np

from .errors import ValidationError
from .model import make_model
from .spectral import QuasiMaternParams


def _params_dict(p):
    return {"sigma2": p.sigma2, "alpha": p.alpha, "nu": p.nu, "tau": p.tau}


def _params_from(d):
    try:
        return QuasiMaternParams(float(d["sigma2"]), float(d["alpha"]),
                                 float(d["nu"]), float(d["tau"]))
    except KeyError as exc:
        raise ValidationError(f"parameter entry missing field {exc}")


def model_to_params_dict(model):
    return {
        "expansion_factor": model.embed.expansion_factor,
        "sigma0_link": model.sigma0_link,
        "global": _params_dict(model.theta0),
        "segments": [_params_dict(p) for p in model.theta],
        "beta": None if model.beta is None else model.beta.tolist(),
    }


def model_from_params_dict(d, grid, partition):
    segs = d.get("segments", [])
    if len(segs) not in (0, partition.q):
        raise ValidationError(
            f"params file has {len(segs)} segments, partition has {partition.q}")
    beta = d.get("beta")
    return make_model(grid, partition,
                      _params_from(d["global"]),
                      [_params_from(s) for s in segs],
                      beta=None if beta is None else np.asarray(beta, dtype=float),
                      factor=float(d.get("expansion_factor", 1.25)),
                      sigma0_link=bool(d.get("sigma0_link", True)))


def save_params(path, model, extra=None):
    doc = model_to_params_dict(model)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_params(path, grid, partition):
    with open(path) as fh:
        doc = json.load(fh)
    if "params" in doc:  # accept a full fit-result document too
        doc = doc["params"]
    return model_from_params_dict(doc, grid, partition)


def fitresult_to_dict(result, evaluation=None):
    doc = {
        "params": model_to_params_dict(result.model),
        "fit": {
            "termination": result.termination,
            "iterations": result.iterations,
            "accepted": result.accepted,
            "rejected": result.rejected,
            "score_norms": [float(v) for v in result.score_norms],
            "g0": result.g0,
            "stop_threshold": result.stop_threshold,
            "pcg_iterations": result.pcg_iterations,
            "n_probes": result.n_probes,
            "seed": result.seed,
            "initial": result.initial,
        },
    }
    if evaluation:
        doc["evaluation"] = evaluation
    return doc


def save_fitresult(path, result, evaluation=None):
    with open(path, "w") as fh:
        json.dump(fitresult_to_dict(result, evaluation), fh, indent=2)
        fh.write("\n")
