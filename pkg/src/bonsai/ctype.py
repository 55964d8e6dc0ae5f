"""Structural type system for design-time validation of workflow edges.

A CType is a named record of fields, each either a primitive kind or a
reference to another CType.  Compatibility is purely structural: names of
the types themselves never matter, only the fully expanded field trees.
"""

from __future__ import annotations

import enum
import re
import threading
from dataclasses import dataclass, field

from .errors import DerivationError, TypeCycleError, UnresolvedTypeError


class PrimitiveType(enum.Enum):
    INTEGER = "integer"
    FLOAT = "float"
    STRING = "string"
    BOOLEAN = "boolean"
    JSON = "json"
    FILE_REF = "file-ref"

    def __repr__(self) -> str:  # keeps diagnostics readable
        return self.value


# A field type is a primitive or the name of another CType.
FieldType = PrimitiveType | str

# An expanded tree maps field name -> PrimitiveType or nested tree.
ExpandedTree = dict[str, "PrimitiveType | dict"]

_PRIMITIVE_NAMES = {p.value: p for p in PrimitiveType}
# Accept the common contract spellings as well.
_PRIMITIVE_ALIASES = {"int": PrimitiveType.INTEGER, "bool": PrimitiveType.BOOLEAN,
                      "str": PrimitiveType.STRING, "number": PrimitiveType.FLOAT}


def parse_primitive(name: str) -> PrimitiveType | None:
    return _PRIMITIVE_NAMES.get(name) or _PRIMITIVE_ALIASES.get(name)


@dataclass(frozen=True)
class CType:
    name: str
    fields: tuple[tuple[str, FieldType], ...]

    def __post_init__(self):
        seen = set()
        for fname, _ in self.fields:
            if fname in seen:
                raise ValueError(f"duplicate field name {fname!r} in CType {self.name!r}")
            seen.add(fname)

    def field_map(self) -> dict[str, FieldType]:
        return dict(self.fields)


class TypeRegistry:
    """Holds named CType definitions.

    References must resolve at insertion time, which makes reference
    cycles impossible by construction; an explicit cycle check guards the
    bulk-load path anyway.  Reads are lock-free snapshots; writes are
    serialized.
    """

    def __init__(self):
        self._defs: dict[str, CType] = {}
        self._lock = threading.Lock()

    def add(self, ctype: CType) -> None:
        with self._lock:
            if ctype.name in self._defs:
                if self._defs[ctype.name] == ctype:
                    return
                raise ValueError(f"CType {ctype.name!r} already defined")
            for fname, ftype in ctype.fields:
                if isinstance(ftype, str):
                    if ftype == ctype.name:
                        raise TypeCycleError(
                            f"CType {ctype.name!r} references itself at field {fname!r}")
                    if ftype not in self._defs:
                        raise UnresolvedTypeError(
                            f"CType {ctype.name!r} references undefined type {ftype!r}",
                            detail={"missing": ftype, "field": fname})
            self._defs[ctype.name] = ctype

    def get(self, name: str) -> CType:
        try:
            return self._defs[name]
        except KeyError:
            raise UnresolvedTypeError(f"undefined CType {name!r}", detail={"missing": name})

    def __contains__(self, name: str) -> bool:
        return name in self._defs

    def names(self) -> list[str]:
        return sorted(self._defs)


def expand(t: CType | FieldType, registry: TypeRegistry) -> PrimitiveType | ExpandedTree:
    """Fully expand a type: no reference remains in the result."""
    if isinstance(t, PrimitiveType):
        return t
    if isinstance(t, str):
        return expand(registry.get(t), registry)
    tree: ExpandedTree = {}
    for fname, ftype in t.fields:
        tree[fname] = expand(ftype, registry)
    return tree


@dataclass(frozen=True)
class Diagnostic:
    path: str
    expected: str | None  # type descriptor on the target side, None if absent
    found: str | None     # type descriptor on the source side, None if absent

    def as_dict(self) -> dict:
        return {"path": self.path, "expected": self.expected, "found": self.found}


@dataclass
class CompatibilityResult:
    compatible: bool
    diagnostics: list[Diagnostic] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"compatible": self.compatible,
                "diagnostics": [d.as_dict() for d in self.diagnostics]}


def _describe(node: PrimitiveType | dict | None) -> str | None:
    if node is None:
        return None
    if isinstance(node, PrimitiveType):
        return node.value
    return "{" + ", ".join(sorted(node)) + "}"


def _compare(source: PrimitiveType | dict, target: PrimitiveType | dict,
             mode: str, prefix: str, out: list[Diagnostic]) -> None:
    if isinstance(source, PrimitiveType) or isinstance(target, PrimitiveType):
        if source != target:
            out.append(Diagnostic(prefix or ".", _describe(target), _describe(source)))
        return
    for fname in sorted(target):
        path = f"{prefix}.{fname}" if prefix else fname
        if fname not in source:
            out.append(Diagnostic(path, _describe(target[fname]), None))
        else:
            _compare(source[fname], target[fname], mode, path, out)
    if mode == "exact":
        for fname in sorted(source):
            if fname not in target:
                path = f"{prefix}.{fname}" if prefix else fname
                out.append(Diagnostic(path, None, _describe(source[fname])))


def check_compatible(source: CType, target: CType, mode: str,
                     registry: TypeRegistry) -> CompatibilityResult:
    """Check whether output type `source` can feed input type `target`.

    exact: expanded trees structurally identical (names ignored).
    lenient: every field target requires exists in source with a
    (recursively lenient-)compatible type; extra source fields allowed.
    """
    if mode not in ("exact", "lenient"):
        raise ValueError(f"unknown mode {mode!r}")
    src = expand(source, registry)
    tgt = expand(target, registry)
    diags: list[Diagnostic] = []
    _compare(src, tgt, mode, "", diags)
    return CompatibilityResult(compatible=not diags, diagnostics=diags)


def compare_trees(source: PrimitiveType | dict, target: PrimitiveType | dict,
                  mode: str) -> CompatibilityResult:
    """Compatibility over already-expanded trees (used for edge port types)."""
    diags: list[Diagnostic] = []
    _compare(source, target, mode, "", diags)
    return CompatibilityResult(compatible=not diags, diagnostics=diags)


# --- contract-derived types -------------------------------------------------

_ident_re = re.compile(r"[^A-Za-z0-9_]+")


def _sanitize(text: str) -> str:
    return _ident_re.sub("_", text).strip("_")


def derived_type_name(service_key: str, path: str, method: str, direction: str) -> str:
    return f"{_sanitize(service_key)}__{method.lower()}_{_sanitize(path)}__{direction}"


def _schema_to_ctype(schema: dict, base_name: str, registry: TypeRegistry,
                     location: str, skip_parameters: bool) -> tuple[CType, list[tuple[str, PrimitiveType]]]:
    """Convert a contract body schema (field -> spec) into a CType.

    Returns the CType (registered under a deterministic name) and, when
    skip_parameters is set, the extracted parameter list.
    """
    fields: list[tuple[str, FieldType]] = []
    parameters: list[tuple[str, PrimitiveType]] = []
    for fname in sorted(schema):
        spec = schema[fname]
        floc = f"{location}.{fname}"
        if not isinstance(spec, dict) or "type" not in spec:
            raise DerivationError(f"untyped field at {floc}", detail={"path": floc})
        ftype_name = spec["type"]
        is_param = bool(spec.get("x-parameter"))
        if ftype_name == "object":
            if is_param:
                raise DerivationError(
                    f"parameter field must be a scalar at {floc}", detail={"path": floc})
            child_schema = spec.get("fields")
            if not isinstance(child_schema, dict):
                raise DerivationError(f"untyped field at {floc}", detail={"path": floc})
            child, _ = _schema_to_ctype(child_schema, f"{base_name}__{fname}",
                                        registry, floc, skip_parameters=False)
            fields.append((fname, child.name))
            continue
        prim = parse_primitive(ftype_name)
        if prim is None:
            raise DerivationError(
                f"unknown type {ftype_name!r} at {floc}", detail={"path": floc})
        if is_param and skip_parameters:
            parameters.append((fname, prim))
        else:
            fields.append((fname, prim))
    ctype = CType(base_name, tuple(fields))
    registry.add(ctype)
    return ctype, parameters


def derive_endpoint_types(contract, path: str, method: str,
                          registry: TypeRegistry) -> tuple[CType, CType, list[tuple[str, PrimitiveType]]]:
    """Derive (input CType, output CType, parameters) for one endpoint.

    Request-body fields annotated `x-parameter: true` become parameters;
    the remaining fields form the input CType; the success-response body
    forms the output CType.  Generated names are deterministic in
    (service key, endpoint, direction).
    """
    endpoint = contract.endpoint(path, method)
    if endpoint is None:
        raise DerivationError(f"no endpoint {method.upper()} {path} in contract",
                              detail={"path": path, "method": method})
    key = f"{contract.name}_{contract.version}"
    in_name = derived_type_name(key, path, method, "input")
    out_name = derived_type_name(key, path, method, "output")
    input_type, parameters = _schema_to_ctype(
        endpoint.request, in_name, registry,
        location=f"{path}.{method}.request", skip_parameters=True)
    success = endpoint.success_response()
    if success is None:
        raise DerivationError(f"no success response for {method.upper()} {path}",
                              detail={"path": f"{path}.{method}.responses"})
    output_type, _ = _schema_to_ctype(
        success, out_name, registry,
        location=f"{path}.{method}.response", skip_parameters=False)
    return input_type, output_type, parameters
