"""Dataset CSVs and the flat ``key = value`` run configuration."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .experiment import ExperimentConfig
from .reid import SplitProtocol


def _fmt(v) -> str:
    return format(float(v), ".17g")


# -- datasets ---------------------------------------------------------------

@dataclass
class FeatureTable:
    sample_ids: np.ndarray
    camera_ids: np.ndarray
    person_ids: np.ndarray  # -1 when unknown
    features: np.ndarray


def write_features_csv(path, features, person_ids=None, camera_ids=None, sample_ids=None) -> None:
    f = np.asarray(features, dtype=np.float64)
    n, d = f.shape
    sid = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    pid = np.full(n, -1) if person_ids is None else np.asarray(person_ids)
    cid = np.zeros(n, dtype=np.int64) if camera_ids is None else np.asarray(camera_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "camera_id", "person_id"] + [f"f{j}" for j in range(d)])
        for i in range(n):
            w.writerow([int(sid[i]), int(cid[i]), int(pid[i])] + [_fmt(v) for v in f[i]])


def read_features_csv(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["sample_id", "camera_id", "person_id"]:
        raise DataError(f"{path}: missing features header")
    body = rows[1:]
    d = len(rows[0]) - 3
    try:
        arr = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(-1, d + 3)
    except ValueError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    return FeatureTable(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2].astype(np.int64),
                        arr[:, 3:])


def write_attributes_csv(path, bits, sample_ids=None) -> None:
    b = np.asarray(bits)
    n, k = b.shape
    sid = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    integral = np.all(b == np.round(b))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"a{j}" for j in range(k)])
        for i in range(n):
            w.writerow([int(sid[i])] + ([int(v) for v in b[i]] if integral else [_fmt(v) for v in b[i]]))


def read_attributes_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(sample_ids, values)``; values stay float so score files load too."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "sample_id":
        raise DataError(f"{path}: missing attributes header")
    k = len(rows[0]) - 1
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, k + 1)
    except ValueError as exc:
        raise DataError(f"{path}: malformed row ({exc})") from exc
    return arr[:, 0].astype(np.int64), arr[:, 1:]


def align(sample_ids: np.ndarray, other_ids: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Reorder ``values`` (keyed by ``other_ids``) to follow ``sample_ids``."""
    index = {int(s): i for i, s in enumerate(other_ids)}
    if len(index) != len(other_ids) or set(index) != set(int(s) for s in sample_ids):
        raise DataError("sample_id keys of features and attributes files do not align")
    return values[[index[int(s)] for s in sample_ids]]


# -- run configuration ------------------------------------------------------

def _int(v: str) -> int:
    return int(v)


def _ints(v: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _floats_or_float(v: str):
    parts = v.replace(",", " ").split()
    return float(parts[0]) if len(parts) == 1 else tuple(float(x) for x in parts)


def _opt_int(v: str) -> Optional[int]:
    return None if v.lower() in ("", "none") else int(v)


def _str(v: str) -> str:
    return v


_STAGE_KEYS: Dict[str, Callable] = {
    "epochs": _int, "batch_size": _int, "learning_rate": float, "momentum": float, "frozen_layers": _ints,
}

SCHEMA: Dict[str, Callable] = {
    "seed": _int,
    "data_dir": _str, "model_dir": _str, "report_dir": _str,
    "p": _int, "tau": float, "loss.theta": float, "loss.gamma": float,
    "synth.num_attributes": _int, "synth.feature_dim": _int, "synth.cameras": _int,
    "synth.samples_per_identity_per_camera": _int, "synth.mean_positive_attributes": float,
    "synth.attribute_flip_rate": _floats_or_float, "synth.feature_noise_sigma": float,
    "synth.nuisance_dim": _int, "synth.nuisance_scale": float, "synth.camera_offset_scale": float,
    "synth.view_dim": _int, "synth.view_scale": float,
    "split.train_identities": _int, "split.unlabeled_identities": _int, "split.test_identities": _int,
    "split.distractors": _int, "split.probe_camera": _int,
    "net.hidden_sizes": _ints, "net.hidden_activation": _str,
    "eval.num_tests": _int, "eval.probe_set_size": _opt_int, "eval.max_rank": _opt_int, "eval.distance": _str,
    "gradcheck.seeds": _int, "gradcheck.epsilon": float, "gradcheck.tolerance": float,
}
for _stage in ("stage1", "stage2", "stage3", "baseline"):
    for _k, _parse in _STAGE_KEYS.items():
        SCHEMA[f"{_stage}.{_k}"] = _parse
    if _stage in ("stage2", "baseline"):
        SCHEMA[f"{_stage}.triplets_per_epoch"] = _int

REQUIRED = {
    "synth": ("data_dir",),
    "train": ("data_dir", "model_dir"),
    "run-all": ("data_dir", "model_dir", "report_dir"),
    "gradcheck": (),
}


def parse_config_text(text: str) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r} ({exc})") from exc
    return out


def load_config(path, command: str) -> Dict[str, object]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config_text(text)
    missing = [k for k in REQUIRED.get(command, ()) if k not in cfg]
    if missing:
        raise ConfigError(f"missing required key(s) for {command}: {', '.join(missing)}")
    return cfg


def experiment_config(cfg: Dict[str, object]) -> ExperimentConfig:
    """Overlay a parsed run config on the default experiment and seed it."""
    base = ExperimentConfig()
    synth_kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("synth.")}
    stage_kw = {s: {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith(s + ".")}
                for s in ("stage1", "stage2", "stage3", "baseline")}
    shared = {}
    if "p" in cfg:
        shared["p"] = cfg["p"]
    if "tau" in cfg:
        shared["tau"] = cfg["tau"]
    loss = {}
    if "loss.theta" in cfg:
        loss["theta"] = cfg["loss.theta"]
    if "loss.gamma" in cfg:
        loss["gamma"] = cfg["loss.gamma"]
    n_train = cfg.get("split.train_identities", base.num_train_identities)
    n_unl = cfg.get("split.unlabeled_identities", base.num_unlabeled_identities)
    n_test = cfg.get("split.test_identities", base.num_test_identities)
    n_dis = cfg.get("split.distractors", base.num_distractors)
    try:
        synth = replace(base.synth, num_identities=n_train + n_unl + n_test + n_dis, **synth_kw)
        exp = replace(
            base,
            synth=synth,
            num_train_identities=n_train, num_unlabeled_identities=n_unl, num_test_identities=n_test,
            num_distractors=n_dis, probe_camera=cfg.get("split.probe_camera", base.probe_camera),
            hidden_sizes=cfg.get("net.hidden_sizes", base.hidden_sizes),
            hidden_activation=cfg.get("net.hidden_activation", base.hidden_activation),
            stage1=replace(base.stage1, **shared, **stage_kw["stage1"]),
            stage2=replace(base.stage2, **shared, **loss, **stage_kw["stage2"]),
            stage3=replace(base.stage3, **shared, **stage_kw["stage3"]),
            baseline=replace(base.baseline, **{k: v for k, v in loss.items() if k == "theta"},
                             **stage_kw["baseline"]),
            protocol=SplitProtocol(
                num_tests=cfg.get("eval.num_tests", base.protocol.num_tests),
                probe_set_size=cfg.get("eval.probe_set_size", base.protocol.probe_set_size),
                max_rank=cfg.get("eval.max_rank", base.protocol.max_rank)),
            tau=cfg.get("tau", base.tau),
            distance=cfg.get("eval.distance", base.distance),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if exp.distance not in ("cosine", "squared_euclidean"):
        raise ConfigError(f"unknown distance {exp.distance!r}")
    return exp.with_seed(int(cfg.get("seed", 0)))
