"""Dataset files and model JSON.

Dataset directory layout::

    zones.csv           zone_id,x_km,y_km,jobs_restaurant,...,jobs_recreation
    individuals.csv     person_id,home_zone,work_zone,household_type,has_kids,
                        has_car,gender,income_class,employment,weight
    accessibility.bin   b"WLAC1", u64 N, u64 J, N*J float64 (all little-endian,
                        row-major); a CSV of N rows x J columns is also read

Zone ids in files may be arbitrary unique integers; they are remapped to
dense indices in file order and kept as ``Dataset.zone_labels``.
Floats are written with 17 significant digits so CSV round trips are exact.
"""

from __future__ import annotations

import base64
import csv
import json
import struct
from pathlib import Path

import numpy as np

from .core import ATTRIBUTES, OCCUPATIONS, DataValidationError, Dataset, Individual, Zone, build_dataset
from .nested_logit import PARAM_NAMES, EstimationResult, NestedLogitModel, NlParams
from .neural import FeatureSpec, NeuralModel, Scaler
from .optim import LbfgsSettings
from .synthgen import NonlinearOracle

ZONES_HEADER = ["zone_id", "x_km", "y_km"] + [f"jobs_{o}" for o in OCCUPATIONS]
INDIVIDUALS_HEADER = ["person_id", "home_zone", "work_zone", *ATTRIBUTES, "weight"]
ACCESS_MAGIC = b"WLAC1"
MODEL_FORMAT_VERSION = 1


class DataFormatError(DataValidationError):
    """A data file could not be parsed."""


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _read_rows(path: Path, header: list[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            found = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [h.strip() for h in found] != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, row


def load_zones(path) -> tuple[list[Zone], list[int]]:
    """Zones in file order with dense ids, plus the original id of each."""
    path = Path(path)
    zones, labels, seen = [], [], set()
    for lineno, row in _read_rows(path, ZONES_HEADER):
        try:
            label = int(row[0])
            x, y = float(row[1]), float(row[2])
            jobs = tuple(int(v) for v in row[3:])
            if label in seen:
                raise DataFormatError(f"{path}:{lineno}: duplicate zone id {label}")
            zones.append(Zone(len(zones), x, y, jobs))
        except DataFormatError:
            raise
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        seen.add(label)
        labels.append(label)
    return zones, labels


def load_individuals(path, zone_labels=None) -> list[Individual]:
    """Individuals with zone references mapped through ``zone_labels``."""
    path = Path(path)
    index = {label: i for i, label in enumerate(zone_labels)} if zone_labels is not None else None
    people, seen = [], set()

    def zone_ref(value: str, lineno: int):
        z = int(value)
        if index is None:
            return z
        if z not in index:
            raise DataFormatError(f"{path}:{lineno}: unknown zone id {z}")
        return index[z]

    for lineno, row in _read_rows(path, INDIVIDUALS_HEADER):
        try:
            pid = int(row[0])
            if pid in seen:
                raise DataFormatError(f"{path}:{lineno}: duplicate person id {pid}")
            work = zone_ref(row[2], lineno) if row[2].strip() else None
            people.append(
                Individual(
                    pid,
                    zone_ref(row[1], lineno),
                    work,
                    *(int(v) for v in row[3:9]),
                    weight=float(row[9]),
                )
            )
        except DataFormatError:
            raise
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        seen.add(pid)
    return people


def load_accessibility(path) -> np.ndarray:
    """Binary WLAC1 or CSV accessibility matrix, detected from the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(ACCESS_MAGIC))
    if head == ACCESS_MAGIC:
        raw = path.read_bytes()
        if len(raw) < 21:
            raise DataFormatError(f"{path}: truncated header")
        n, j = struct.unpack_from("<QQ", raw, 5)
        expected = 21 + 8 * n * j
        if len(raw) != expected:
            raise DataFormatError(f"{path}: expected {expected} bytes for {n}x{j}, found {len(raw)}")
        return np.frombuffer(raw, dtype="<f8", offset=21).astype(np.float64).reshape(n, j)
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(f"{path}:{lineno}: ragged row")
    return np.array(rows, dtype=np.float64).reshape(len(rows), -1 if rows else 0)


def save_accessibility_bin(matrix, path) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(ACCESS_MAGIC)
        fh.write(struct.pack("<QQ", *m.shape))
        fh.write(m.tobytes())


def save_accessibility_csv(matrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix, dtype=np.float64):
            writer.writerow(fmt_float(v) for v in row)


def save_zones(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ZONES_HEADER)
        for label, z in zip(dataset.zone_labels, dataset.zones):
            writer.writerow([label, fmt_float(z.x_km), fmt_float(z.y_km), *z.jobs])


def save_individuals(dataset: Dataset, path) -> None:
    labels = dataset.zone_labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDIVIDUALS_HEADER)
        for p in dataset.individuals:
            work = "" if p.work_zone is None else labels[p.work_zone]
            writer.writerow([p.person_id, labels[p.home_zone], work, *p.attributes(), fmt_float(p.weight)])


def save_dataset(dataset: Dataset, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "zones.csv", d / "individuals.csv", d / "accessibility.bin"]
    save_zones(dataset, paths[0])
    save_individuals(dataset, paths[1])
    save_accessibility_bin(dataset.accessibility, paths[2])
    return paths


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    zones, labels = load_zones(d / "zones.csv")
    people = load_individuals(d / "individuals.csv", labels)
    acc_path = d / "accessibility.bin"
    if not acc_path.exists():
        acc_path = d / "accessibility.csv"
    acc = load_accessibility(acc_path)
    return build_dataset(zones, people, acc, labels)


# -- model JSON --------------------------------------------------------------


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def nl_model_to_dict(model: NestedLogitModel, **meta) -> dict:
    est = model.estimation
    rows = []
    values = model.params.values()
    se = est.std_errors if est is not None else None
    tv = est.t_values if est is not None else None
    for i, name in enumerate(PARAM_NAMES):
        rows.append(
            {
                "name": name,
                "value": float(values[i]),
                "std_error": None if se is None else float(se[i]),
                "t_value": None if tv is None else float(tv[i]),
            }
        )
    out = {"model_kind": NestedLogitModel.model_kind, "format_version": MODEL_FORMAT_VERSION, "parameters": rows}
    if est is not None:
        out.update(
            {
                "t_against_1": est.t_against_1,
                "ll_final": est.ll_final,
                "ll_null": est.ll_null,
                "n_obs": est.n_obs,
                "converged": est.converged,
                "iterations": est.iterations,
                "message": est.message,
                "hessian_ok": est.hessian_ok,
                "settings": {
                    "memory": est.settings.memory,
                    "tol": est.settings.tol,
                    "max_iter": est.settings.max_iter,
                    "armijo_c": est.settings.armijo_c,
                    "shrink": est.settings.shrink,
                },
            }
        )
    out.update(meta)
    return out


def neural_model_to_dict(model: NeuralModel, **meta) -> dict:
    out = {
        "model_kind": NeuralModel.model_kind,
        "format_version": MODEL_FORMAT_VERSION,
        "feature_spec": model.feature_spec.to_dict(),
        "scaler": model.scaler.to_dict(),
        "hidden_sizes": list(model.hidden_sizes),
        "output_activation": model.output_activation,
        "weights": [_encode_array(W) for W in model.weights],
        "biases": [_encode_array(b) for b in model.biases],
        "w_out": _encode_array(model.w_out),
        "asc": [float(v) for v in model.asc],
    }
    out.update(meta)
    return out


def oracle_to_dict(model: NonlinearOracle, **meta) -> dict:
    out = {
        "model_kind": NonlinearOracle.model_kind,
        "format_version": MODEL_FORMAT_VERSION,
        "params": model.params.to_dict(),
        "gamma": model.gamma,
        "delta": model.delta,
    }
    out.update(meta)
    return out


def model_to_dict(model, **meta) -> dict:
    if isinstance(model, NestedLogitModel):
        return nl_model_to_dict(model, **meta)
    if isinstance(model, NeuralModel):
        return neural_model_to_dict(model, **meta)
    if isinstance(model, NonlinearOracle):
        return oracle_to_dict(model, **meta)
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d.get("model_kind")
    if kind == NestedLogitModel.model_kind:
        values = {row["name"]: row["value"] for row in d["parameters"]}
        params = NlParams.from_dict(values)
        est = None
        if "ll_final" in d:
            se = [row["std_error"] for row in d["parameters"]]
            s = d.get("settings", {})
            est = EstimationResult(
                params=params,
                std_errors=None if any(v is None for v in se) else np.array(se, dtype=np.float64),
                ll_final=d["ll_final"],
                ll_null=d["ll_null"],
                n_obs=d["n_obs"],
                converged=d["converged"],
                iterations=d["iterations"],
                message=d.get("message", ""),
                settings=LbfgsSettings(**s) if s else LbfgsSettings(),
            )
        return NestedLogitModel(params, est)
    if kind == NeuralModel.model_kind:
        return NeuralModel(
            [_decode_array(w) for w in d["weights"]],
            [_decode_array(b) for b in d["biases"]],
            _decode_array(d["w_out"]),
            np.array(d["asc"], dtype=np.float64),
            Scaler.from_dict(d["scaler"]),
            FeatureSpec.from_dict(d["feature_spec"]),
            d.get("output_activation", "identity"),
        )
    if kind == NonlinearOracle.model_kind:
        return NonlinearOracle(NlParams.from_dict(d["params"]), d["gamma"], d["delta"])
    raise DataFormatError(f"unknown model_kind {kind!r}")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")


def save_model(model, path, **meta) -> dict:
    d = model_to_dict(model, **meta)
    write_json(d, path)
    return d


def read_model_file(path) -> tuple[object, dict]:
    """Model object and the raw JSON document (for its metadata)."""
    with open(path) as fh:
        d = json.load(fh)
    return model_from_dict(d), d
