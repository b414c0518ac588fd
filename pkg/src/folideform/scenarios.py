"""Built-in scenarios, stored in the same structure a user config file has."""

from __future__ import annotations

import copy


def _term(k, I=(), **amp) -> dict:
    return {"k": list(k), "I": list(I), **amp}


def _form(degree: int, *terms) -> dict:
    return {"degree": degree, "terms": list(terms)}


_PRODUCT_DOMAIN = {"dim": 3, "orientation": 1}
_PRODUCT_COUPLE = {"gamma": _form(1, _term((0, 0, 0), (0,), c=1.0)), "X": {"constant": [1.0, 0.0, 0.0]}}

# beta = sin(2 pi s)(dx_1 + 3 dx_2): the product form a(s) c.dx
_UNOBSTRUCTED_BETA = _form(1, _term((1, 0, 0), (1,), sin=1.0), _term((1, 0, 0), (2,), sin=3.0))
# beta = sin(2 pi s) dx_1 + cos(2 pi s) dx_2
_OBSTRUCTED_BETA = _form(1, _term((1, 0, 0), (1,), sin=1.0), _term((1, 0, 0), (2,), cos=1.0))
# harmonic 1-forms of the leaf T^2
_CONE_BASIS = [_form(1, _term((0, 0, 0), (1,), c=1.0)), _form(1, _term((0, 0, 0), (2,), c=1.0))]

BUILTINS = {
    "flat-levi-torus": {
        "description": "L = {y_2 = 0} in the flat complex 2-torus: graph scan, leafwise kernel, rigidity.",
        "ambient": {"m": 2, "Gamma": "standard", "J": "standard"},
        "defining_function": {"axis": 3, "scale": 1.0},
        "tolerances": {"tol": 1e-10, "levi": 1e-8, "rank": 1e-9},
        "bandwidth": 4,
        "analyses": [
            "frobenius",
            {"levi-scan": {"graphs": [_form(0, _term((0, 0, 1), sin=0.01)),
                                      _form(0, _term((1, 0, 0), sin=0.01))]}},
            {"deformation-derivative": {"p": _form(0, _term((1, 0, 1), cos=1.0)), "mode": "formal"}},
            {"leaf-kernel": {"B": 4}},
            "rigidity",
            "gamma-wedge-omega",
            {"cohomology": {"degrees": [0, 1], "B": 2}},
        ],
    },
    "product-s1-t2": {
        "description": "Product foliation of S^1 x T^2 by the tori {s = const}.",
        "domain": _PRODUCT_DOMAIN,
        "couple": _PRODUCT_COUPLE,
        "bandwidth": 3,
        "analyses": [
            "frobenius",
            "c-class",
            {"cohomology": {"degrees": [0, 1], "B": 3}},
            {"mc-residual": {"a": _UNOBSTRUCTED_BETA, "t": [0.1, 1.0, 10.0]}},
            {"gauge-derivative": {"Y": [_form(0, _term((0, 1, 0), sin=0.1)), _form(0, _term((1, 0, 0), sin=0.1)),
                                         _form(0)]}},
        ],
    },
    "contact-noninteg": {
        "description": "Contact form cos(2 pi x_3) dx_1 + sin(2 pi x_3) dx_2: Frobenius fails.",
        "domain": {"dim": 3, "orientation": 1},
        "couple": {
            "gamma": _form(1, _term((0, 0, 1), (0,), cos=1.0), _term((0, 0, 1), (1,), sin=1.0)),
            "X": [_form(0, _term((0, 0, 1), cos=1.0)), _form(0, _term((0, 0, 1), sin=1.0)), _form(0)],
        },
        "analyses": ["frobenius"],
    },
    "paper-example-obstructed": {
        "description": "beta = sin(2 pi s) dx_1 + cos(2 pi s) dx_2 on S^1 x T^2: obstructed at order 2.",
        "domain": _PRODUCT_DOMAIN,
        "couple": _PRODUCT_COUPLE,
        "analyses": [
            {"formal-extend": {"beta": _OBSTRUCTED_BETA, "order": 3}},
            {"tangent-cone": {"beta": _OBSTRUCTED_BETA, "basis": _CONE_BASIS}},
        ],
    },
    "paper-example-unobstructed": {
        "description": "beta = sin(2 pi s)(dx_1 + 3 dx_2) on S^1 x T^2: an exact Maurer-Cartan line.",
        "domain": _PRODUCT_DOMAIN,
        "couple": _PRODUCT_COUPLE,
        "analyses": [
            {"mc-residual": {"a": _UNOBSTRUCTED_BETA, "t": [0.1, 1.0, 10.0]}},
            {"formal-extend": {"beta": _UNOBSTRUCTED_BETA, "order": 4}},
            {"tangent-cone": {"beta": _UNOBSTRUCTED_BETA, "basis": _CONE_BASIS}},
        ],
    },
    "uniqueness-t2": {
        "description": "Unit leaf T^2 with beta = dx_1: kernel of P P^c on B_F and the first eigenvalue.",
        "domain": {"dim": 2, "orientation": 1},
        "analyses": [
            {"uniqueness": {"beta": _form(1, _term((0, 0), (0,), c=1.0)), "B": 6, "samples": 100}},
            {"spectrum": {"count": 6, "constraint": "B_F", "b_F": _form(1, _term((0, 0), (0,), c=1.0))}},
            {"spectrum": {"count": 6, "constraint": "all"}},
        ],
    },
}


def builtin_names() -> list:
    return list(BUILTINS)


def builtin_config(name: str) -> dict:
    if name not in BUILTINS:
        raise KeyError(name)
    cfg = copy.deepcopy(BUILTINS[name])
    cfg["name"] = name
    return cfg
