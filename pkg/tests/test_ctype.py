import random

import pytest
from hypothesis import given, settings, strategies as st

from bonsai import ctype as ct
from bonsai.errors import DerivationError, TypeCycleError, UnresolvedTypeError
from bonsai.registry import parse_contract

from .oracles import (PRIMS, mutate_tree, naive_compatible, naive_expand,
                      random_tree, tree_to_ctype)


def make_registry(*ctypes):
    reg = ct.TypeRegistry()
    for c in ctypes:
        reg.add(c)
    return reg


class TestRegistry:
    def test_references_resolve_at_insert(self):
        reg = ct.TypeRegistry()
        with pytest.raises(UnresolvedTypeError):
            reg.add(ct.CType("a", (("x", "missing"),)))

    def test_self_reference_rejected(self):
        reg = ct.TypeRegistry()
        with pytest.raises(TypeCycleError):
            reg.add(ct.CType("a", (("x", "a"),)))

    def test_identical_redefinition_tolerated(self):
        reg = ct.TypeRegistry()
        c = ct.CType("a", (("x", ct.PrimitiveType.INTEGER),))
        reg.add(c)
        reg.add(ct.CType("a", (("x", ct.PrimitiveType.INTEGER),)))

    def test_conflicting_redefinition_rejected(self):
        reg = ct.TypeRegistry()
        reg.add(ct.CType("a", (("x", ct.PrimitiveType.INTEGER),)))
        with pytest.raises(ValueError):
            reg.add(ct.CType("a", (("x", ct.PrimitiveType.STRING),)))

    def test_duplicate_field_names_rejected(self):
        with pytest.raises(ValueError):
            ct.CType("a", (("x", ct.PrimitiveType.INTEGER),
                           ("x", ct.PrimitiveType.STRING)))


class TestExpand:
    def test_nested_reference_expansion(self):
        inner = ct.CType("inner", (("v", ct.PrimitiveType.FLOAT),))
        outer = ct.CType("outer", (("i", "inner"), ("n", ct.PrimitiveType.STRING)))
        reg = make_registry(inner, outer)
        assert ct.expand(outer, reg) == {
            "i": {"v": ct.PrimitiveType.FLOAT}, "n": ct.PrimitiveType.STRING}

    def test_matches_naive_expand_randomized(self):
        rng = random.Random(7)
        for i in range(50):
            tree = random_tree(rng, depth=3, width=4)
            if isinstance(tree, ct.PrimitiveType):
                continue
            reg = ct.TypeRegistry()
            c = tree_to_ctype(f"t{i}", tree, reg)
            assert ct.expand(c, reg) == naive_expand(c, reg) == tree


class TestCompatibility:
    def test_exact_ignores_type_names(self):
        a = ct.CType("left", (("x", ct.PrimitiveType.INTEGER),))
        b = ct.CType("right", (("x", ct.PrimitiveType.INTEGER),))
        reg = make_registry(a, b)
        assert ct.check_compatible(a, b, "exact", reg).compatible

    def test_lenient_allows_extra_source_fields(self):
        src = ct.CType("src", (("x", ct.PrimitiveType.INTEGER),
                               ("extra", ct.PrimitiveType.STRING)))
        dst = ct.CType("dst", (("x", ct.PrimitiveType.INTEGER),))
        reg = make_registry(src, dst)
        assert ct.check_compatible(src, dst, "lenient", reg).compatible
        assert not ct.check_compatible(src, dst, "exact", reg).compatible

    def test_lenient_is_recursive(self):
        inner_src = ct.CType("isrc", (("a", ct.PrimitiveType.INTEGER),
                                      ("b", ct.PrimitiveType.FLOAT)))
        inner_dst = ct.CType("idst", (("a", ct.PrimitiveType.INTEGER),))
        src = ct.CType("src", (("n", "isrc"),))
        dst = ct.CType("dst", (("n", "idst"),))
        reg = make_registry(inner_src, inner_dst, src, dst)
        assert ct.check_compatible(src, dst, "lenient", reg).compatible

    def test_diagnostic_paths_name_the_field(self):
        src = ct.CType("src", (("n", ct.PrimitiveType.STRING),))
        dst = ct.CType("dst", (("n", ct.PrimitiveType.INTEGER),
                               ("m", ct.PrimitiveType.FLOAT)))
        reg = make_registry(src, dst)
        result = ct.check_compatible(src, dst, "exact", reg)
        paths = sorted(d.path for d in result.diagnostics)
        assert paths == ["m", "n"]
        missing = next(d for d in result.diagnostics if d.path == "m")
        assert missing.found is None and missing.expected == "float"

    def test_unknown_mode_rejected(self):
        a = ct.CType("a", ())
        reg = make_registry(a)
        with pytest.raises(ValueError):
            ct.check_compatible(a, a, "fuzzy", reg)

    def test_oracle_agreement_randomized(self):
        rng = random.Random(2024)
        for i in range(300):
            left = random_tree(rng, depth=4, width=6)
            right = mutate_tree(rng, left) if rng.random() < 0.5 \
                else random_tree(rng, depth=4, width=6)
            if isinstance(left, ct.PrimitiveType) or isinstance(right, ct.PrimitiveType):
                continue
            reg = ct.TypeRegistry()
            src = tree_to_ctype(f"s{i}", left, reg)
            dst = tree_to_ctype(f"d{i}", right, reg)
            for mode in ("exact", "lenient"):
                got = ct.check_compatible(src, dst, mode, reg)
                want = naive_compatible(left, right, mode)
                assert got.compatible == want, (left, right, mode)
                # diagnostics exactly when incompatible
                assert bool(got.diagnostics) == (not want)


@st.composite
def tree_strategy(draw, depth=3):
    if depth == 0:
        return draw(st.sampled_from(PRIMS))
    branch = draw(st.booleans())
    if not branch:
        return draw(st.sampled_from(PRIMS))
    names = draw(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=4,
                          unique=True))
    return {n: draw(tree_strategy(depth=depth - 1)) for n in names}


class TestCompatibilityProperties:
    @settings(max_examples=150, deadline=None)
    @given(tree=tree_strategy())
    def test_reflexive_in_both_modes(self, tree):
        for mode in ("exact", "lenient"):
            assert ct.compare_trees(tree, tree, mode).compatible

    @settings(max_examples=150, deadline=None)
    @given(left=tree_strategy(), right=tree_strategy())
    def test_exact_symmetric_and_implies_lenient(self, left, right):
        forward = ct.compare_trees(left, right, "exact").compatible
        assert forward == ct.compare_trees(right, left, "exact").compatible
        if forward:
            assert ct.compare_trees(left, right, "lenient").compatible

    @settings(max_examples=150, deadline=None)
    @given(left=tree_strategy(), mid=tree_strategy(), right=tree_strategy())
    def test_lenient_transitive(self, left, mid, right):
        ab = ct.compare_trees(left, mid, "lenient").compatible
        bc = ct.compare_trees(mid, right, "lenient").compatible
        if ab and bc:
            assert ct.compare_trees(left, right, "lenient").compatible


CONTRACT = {
    "name": "svc", "version": "1.0.0", "health": "/health",
    "paths": {"/run": {"post": {
        "request": {
            "text": {"type": "string"},
            "limit": {"type": "integer", "x-parameter": True},
            "options": {"type": "object",
                        "fields": {"flag": {"type": "boolean"}}},
        },
        "responses": {"200": {"score": {"type": "float"}}},
    }}},
}


class TestDerivation:
    def test_parameters_split_from_input(self):
        reg = ct.TypeRegistry()
        doc = parse_contract(CONTRACT)
        inp, outp, params = ct.derive_endpoint_types(doc, "/run", "post", reg)
        assert params == [("limit", ct.PrimitiveType.INTEGER)]
        assert [f for f, _ in inp.fields] == ["options", "text"]
        assert ct.expand(outp, reg) == {"score": ct.PrimitiveType.FLOAT}

    def test_derived_names_deterministic(self):
        reg1, reg2 = ct.TypeRegistry(), ct.TypeRegistry()
        doc = parse_contract(CONTRACT)
        a = ct.derive_endpoint_types(doc, "/run", "post", reg1)
        b = ct.derive_endpoint_types(doc, "/run", "post", reg2)
        assert a[0].name == b[0].name and a[1].name == b[1].name
        assert a[0].name != a[1].name

    def test_rederiving_same_endpoint_is_idempotent(self):
        reg = ct.TypeRegistry()
        doc = parse_contract(CONTRACT)
        ct.derive_endpoint_types(doc, "/run", "post", reg)
        ct.derive_endpoint_types(doc, "/run", "post", reg)

    def test_untyped_field_rejected(self):
        reg = ct.TypeRegistry()
        bad = {"name": "svc", "version": "1.0.0", "health": "/h",
               "paths": {"/x": {"post": {"request": {"v": {}},
                                         "responses": {"200": {}}}}}}
        doc = parse_contract(bad)
        with pytest.raises(DerivationError):
            ct.derive_endpoint_types(doc, "/x", "post", reg)

    def test_object_parameter_rejected(self):
        reg = ct.TypeRegistry()
        bad = {"name": "svc", "version": "1.0.0", "health": "/h",
               "paths": {"/x": {"post": {
                   "request": {"v": {"type": "object", "x-parameter": True,
                                     "fields": {"a": {"type": "string"}}}},
                   "responses": {"200": {}}}}}}
        doc = parse_contract(bad)
        with pytest.raises(DerivationError):
            ct.derive_endpoint_types(doc, "/x", "post", reg)

    def test_primitive_aliases_accepted(self):
        assert ct.parse_primitive("int") is ct.PrimitiveType.INTEGER
        assert ct.parse_primitive("number") is ct.PrimitiveType.FLOAT
        assert ct.parse_primitive("file-ref") is ct.PrimitiveType.FILE_REF
        assert ct.parse_primitive("unknown") is None
