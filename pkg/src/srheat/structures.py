"""Loading contact structures from JSON files and built-in shorthand names.

A structure file is a JSON object with a ``name`` and exactly one of

* ``frame``: ``{"f1": [cx, cy, cw], "f2": [cx, cy, cw]}`` with coefficient
  expressions as strings in the calculator grammar (variables x, y, w), or
* ``model``: ``{"a": ..., "b": ..., "c": ...}``, shorthand for the quadratic
  normal-form frame.

The JSON schema ships in ``docs/structure-file.schema.json``.  Alongside
files, three built-in spellings cover the golden structures without touching
disk:

* ``heisenberg``
* ``model:a,b,c``            (e.g. ``model:1,0,1``)
* ``rotated-heisenberg:EXPR`` (flat frame rotated by the angle field EXPR,
  e.g. ``rotated-heisenberg:0.3*x+0.7*y-0.2*w``)

Every loaded structure is contact-checked at the origin before use.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Tuple, Union

from .expr import ExprError, parse
from .geometry import DegenerateFrameError, Frame, VectorField, heisenberg_frame, rotate_frame
from .perturbation import QuadraticModel, model_frame

__all__ = ["StructureError", "load_structure", "resolve_structure"]

_ORIGIN = (0.0, 0.0, 0.0)


class StructureError(ValueError):
    """A structure file or spelling is malformed or fails the contact check."""


def _contact_checked(name: str, F: Frame) -> Tuple[str, Frame]:
    try:
        F.basis_matrix(_ORIGIN)
    except DegenerateFrameError as exc:
        raise StructureError(
            f"structure {name!r} fails the contact check at the origin: {exc}"
        ) from exc
    return name, F


def _field_from_strings(label: str, coeffs) -> VectorField:
    if not (isinstance(coeffs, (list, tuple)) and len(coeffs) == 3):
        raise StructureError(f"{label} must be a list of three expression strings")
    parsed = []
    for i, text in enumerate(coeffs):
        if not isinstance(text, str):
            raise StructureError(
                f"{label}[{i}] must be an expression string, got {type(text).__name__}")
        try:
            parsed.append(parse(text))
        except ExprError as exc:
            raise StructureError(f"cannot parse {label}[{i}] = {text!r}: {exc}") from exc
    return VectorField(*parsed)


def _model_from_mapping(payload) -> QuadraticModel:
    if not isinstance(payload, dict) or set(payload) != {"a", "b", "c"}:
        raise StructureError('"model" must be an object with exactly the keys a, b, c')
    try:
        return QuadraticModel(float(payload["a"]), float(payload["b"]),
                              float(payload["c"]))
    except (TypeError, ValueError) as exc:
        raise StructureError(f"model coefficients must be numbers: {exc}") from exc


def load_structure(source: Union[str, Path]) -> Tuple[str, Frame]:
    """Load ``(name, Frame)`` from a structure JSON file."""
    path = Path(source)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise StructureError(f"cannot read structure file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StructureError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StructureError(f"{path}: top level must be a JSON object")

    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise StructureError(f'{path}: "name" must be a non-empty string')
    unknown = set(doc) - {"name", "frame", "model"}
    if unknown:
        raise StructureError(f"{path}: unknown keys {sorted(unknown)}")
    has_frame = "frame" in doc
    has_model = "model" in doc
    if has_frame == has_model:
        raise StructureError(f'{path}: exactly one of "frame" or "model" is required')

    if has_model:
        return _contact_checked(name, model_frame(_model_from_mapping(doc["model"])))

    frame = doc["frame"]
    if not isinstance(frame, dict) or set(frame) != {"f1", "f2"}:
        raise StructureError(f'{path}: "frame" must be an object with keys f1, f2')
    F = Frame(_field_from_strings("f1", frame["f1"]),
              _field_from_strings("f2", frame["f2"]))
    return _contact_checked(name, F)


def resolve_structure(spec: str) -> Tuple[str, Frame]:
    """Resolve a CLI structure argument: built-in spelling or file path."""
    if spec == "heisenberg":
        return _contact_checked("heisenberg", heisenberg_frame())
    if spec.startswith("model:"):
        parts = spec[len("model:"):].split(",")
        if len(parts) != 3:
            raise StructureError(
                f"expected model:a,b,c with three numbers, got {spec!r}")
        try:
            a, b, c = (float(p) for p in parts)
        except ValueError as exc:
            raise StructureError(f"bad model coefficients in {spec!r}: {exc}") from exc
        return _contact_checked(spec, model_frame(QuadraticModel(a, b, c)))
    if spec.startswith("rotated-heisenberg:"):
        angle = spec[len("rotated-heisenberg:"):]
        try:
            theta = parse(angle)
        except ExprError as exc:
            raise StructureError(
                f"cannot parse rotation angle {angle!r}: {exc}") from exc
        return _contact_checked(spec, rotate_frame(heisenberg_frame(), theta))
    if spec.endswith(".json") or "/" in spec or Path(spec).exists():
        return load_structure(spec)
    raise StructureError(
        f"unknown structure {spec!r}: expected heisenberg, model:a,b,c, "
        "rotated-heisenberg:EXPR, or a path to a JSON structure file")
