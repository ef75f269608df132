"""Run configuration: a strict JSON document driving data, training, and output.

Unknown keys are rejected at every level and all values are range-checked, so
a config either loads completely or fails with a message naming the bad key.
The ``lambda`` weight may be nonzero only in the consistency-loss modes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import ModalityMap, SynthSpec
from .errors import ConfigError, InvalidSpec
from .losses import LossParams
from .network import LrSchedule
from .training import CCL_MODES, MODES, TrainSettings

DEFAULT_DECAY = ((10, 0.1), (16, 0.01))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "sas"
    out_dir: str = "pho_out"
    synth: SynthSpec = field(default_factory=SynthSpec)
    settings: TrainSettings = field(default_factory=TrainSettings)


def _take(doc: dict, context: str, known: dict):
    """Pop known keys with defaults; any leftover key is an error."""
    out = {}
    doc = dict(doc)
    for key, default in known.items():
        out[key] = doc.pop(key, default)
    if doc:
        raise ConfigError(f"{context}: unknown keys {sorted(doc)}")
    return out


_MISSING = object()


def _number(context, name, value, lo=None, hi=None, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context}: {name} must be a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise ConfigError(f"{context}: {name} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{context}: {name} must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{context}: {name} must be <= {hi}, got {value}")
    return value


def _parse_modality_map(doc, input_dim: int) -> ModalityMap | None:
    if doc is None:
        return None
    if not isinstance(doc, dict):
        raise ConfigError("synth.modality_map must be null or an object")
    got = _take(doc, "synth.modality_map", {"matrix": _MISSING, "offset": _MISSING})
    if got["matrix"] is _MISSING or got["offset"] is _MISSING:
        raise ConfigError("synth.modality_map needs both 'matrix' and 'offset'")
    try:
        return ModalityMap(np.array(got["matrix"], dtype=np.float64),
                           np.array(got["offset"], dtype=np.float64))
    except (InvalidSpec, ValueError) as exc:
        raise ConfigError(f"synth.modality_map: {exc}") from None


def _parse_synth(doc, run_seed: int) -> SynthSpec:
    got = _take(doc, "synth", {
        "num_classes": 10,
        "samples_per_class_per_modality": 20,
        "input_dim": 12,
        "noise_sigma": 0.35,
        "modality_map": None,
        "seed": _MISSING,
    })
    seed = run_seed if got["seed"] is _MISSING else _number("synth", "seed", got["seed"], integer=True)
    _number("synth", "num_classes", got["num_classes"], lo=2, integer=True)
    _number("synth", "samples_per_class_per_modality",
            got["samples_per_class_per_modality"], lo=1, integer=True)
    _number("synth", "input_dim", got["input_dim"], lo=1, integer=True)
    _number("synth", "noise_sigma", got["noise_sigma"], lo=0.0)
    mmap = _parse_modality_map(got["modality_map"], got["input_dim"])
    try:
        return SynthSpec(num_classes=got["num_classes"],
                         samples_per_class_per_modality=got["samples_per_class_per_modality"],
                         input_dim=got["input_dim"], noise_sigma=float(got["noise_sigma"]),
                         modality_map=mmap, seed=int(seed))
    except InvalidSpec as exc:
        raise ConfigError(f"synth: {exc}") from None


def _parse_pho(doc, mode: str) -> TrainSettings:
    got = _take(doc, "pho", {
        "alpha": 0.1,
        "beta": 0.5,
        "gamma": 1.0,
        "rho": 0.3,
        "lambda": _MISSING,
        "triplet_margin": 0.3,
        "mmd_bandwidths": None,
        "gem_p": 3.0,
        "aal_tol": 1e-10,
        "aal_max_iters": 100,
        "epochs": 24,
        "base_lr": 0.1,
        "momentum": 0.9,
        "warmup_epochs": 1,
        "decay_points": [list(p) for p in DEFAULT_DECAY],
        "ids_per_batch": 4,
        "samples_per_id": 4,
        "hidden_dim": 16,
        "embed_dim": 8,
        "normalize_embeddings": True,
        "eval_k": 20,
    })
    if got["lambda"] is _MISSING:
        lam = 1.0 if mode in CCL_MODES else 0.0
    else:
        lam = float(_number("pho", "lambda", got["lambda"], lo=0.0))
    for name, kwargs in (("alpha", {"lo": 0.0}), ("beta", {"lo": 0.0}),
                         ("gamma", {"lo": 0.0}), ("rho", {"lo": 0.0}),
                         ("triplet_margin", {"lo": 0.0}), ("gem_p", {"lo": 1.0}),
                         ("aal_tol", {}), ("base_lr", {}),
                         ("momentum", {"lo": 0.0, "hi": 1.0})):
        _number("pho", name, got[name], **kwargs)
    for name in ("aal_max_iters", "epochs", "warmup_epochs", "ids_per_batch",
                 "samples_per_id", "hidden_dim", "embed_dim", "eval_k"):
        _number("pho", name, got[name], lo=0 if name == "warmup_epochs" else 1,
                integer=True)
    if not isinstance(got["normalize_embeddings"], bool):
        raise ConfigError("pho: normalize_embeddings must be true or false")
    bw = got["mmd_bandwidths"]
    if bw is not None:
        if not isinstance(bw, list) or not bw:
            raise ConfigError("pho: mmd_bandwidths must be null or a non-empty list")
        bw = tuple(float(_number("pho", "mmd_bandwidths[i]", b)) for b in bw)
    decay = got["decay_points"]
    if not isinstance(decay, list):
        raise ConfigError("pho: decay_points must be a list of [epoch, factor] pairs")
    decay_points = []
    for pair in decay:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError("pho: decay_points entries must be [epoch, factor] pairs")
        decay_points.append((int(_number("pho", "decay epoch", pair[0], lo=0, integer=True)),
                             float(_number("pho", "decay factor", pair[1]))))
    try:
        loss = LossParams(beta=float(got["beta"]), gamma=float(got["gamma"]),
                          rho=float(got["rho"]), lam=lam,
                          triplet_margin=float(got["triplet_margin"]),
                          mmd_bandwidths=bw, gem_p=float(got["gem_p"]))
        schedule = LrSchedule(base_lr=float(got["base_lr"]),
                              momentum=float(got["momentum"]),
                              warmup_epochs=int(got["warmup_epochs"]),
                              decay_points=tuple(decay_points))
        return TrainSettings(mode=mode, alpha=float(got["alpha"]),
                             aal_max_iters=int(got["aal_max_iters"]),
                             aal_tol=float(got["aal_tol"]), loss=loss,
                             schedule=schedule, epochs=int(got["epochs"]),
                             ids_per_batch=int(got["ids_per_batch"]),
                             samples_per_id=int(got["samples_per_id"]),
                             hidden_dim=int(got["hidden_dim"]),
                             embed_dim=int(got["embed_dim"]),
                             normalize_embeddings=bool(got["normalize_embeddings"]),
                             eval_k=int(got["eval_k"]))
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"pho: {exc}") from None


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    got = _take(doc, "config", {
        "seed": 0, "mode": "sas", "out_dir": "pho_out", "synth": {}, "pho": {},
    })
    seed = int(_number("config", "seed", got["seed"], integer=True))
    mode = got["mode"]
    if mode not in MODES:
        raise ConfigError(f"config: mode must be one of {MODES}, got {mode!r}")
    if not isinstance(got["out_dir"], str) or not got["out_dir"]:
        raise ConfigError("config: out_dir must be a non-empty string")
    if not isinstance(got["synth"], dict):
        raise ConfigError("config: synth must be an object")
    if not isinstance(got["pho"], dict):
        raise ConfigError("config: pho must be an object")
    synth = _parse_synth(got["synth"], seed)
    settings = _parse_pho(got["pho"], mode)
    return RunConfig(seed=seed, mode=mode, out_dir=got["out_dir"],
                     synth=synth, settings=settings)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return run_config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    mmap = cfg.synth.modality_map
    return {
        "seed": cfg.seed,
        "mode": cfg.mode,
        "out_dir": cfg.out_dir,
        "synth": {
            "num_classes": cfg.synth.num_classes,
            "samples_per_class_per_modality": cfg.synth.samples_per_class_per_modality,
            "input_dim": cfg.synth.input_dim,
            "noise_sigma": cfg.synth.noise_sigma,
            "modality_map": None if mmap is None else {
                "matrix": mmap.matrix.tolist(), "offset": mmap.offset.tolist()},
            "seed": cfg.synth.seed,
        },
        "pho": {
            "alpha": cfg.settings.alpha,
            "beta": cfg.settings.loss.beta,
            "gamma": cfg.settings.loss.gamma,
            "rho": cfg.settings.loss.rho,
            "lambda": cfg.settings.loss.lam,
            "triplet_margin": cfg.settings.loss.triplet_margin,
            "mmd_bandwidths": (None if cfg.settings.loss.mmd_bandwidths is None
                               else list(cfg.settings.loss.mmd_bandwidths)),
            "gem_p": cfg.settings.loss.gem_p,
            "aal_tol": cfg.settings.aal_tol,
            "aal_max_iters": cfg.settings.aal_max_iters,
            "epochs": cfg.settings.epochs,
            "base_lr": cfg.settings.schedule.base_lr,
            "momentum": cfg.settings.schedule.momentum,
            "warmup_epochs": cfg.settings.schedule.warmup_epochs,
            "decay_points": [list(p) for p in cfg.settings.schedule.decay_points],
            "ids_per_batch": cfg.settings.ids_per_batch,
            "samples_per_id": cfg.settings.samples_per_id,
            "hidden_dim": cfg.settings.hidden_dim,
            "embed_dim": cfg.settings.embed_dim,
            "normalize_embeddings": cfg.settings.normalize_embeddings,
            "eval_k": cfg.settings.eval_k,
        },
    }


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
