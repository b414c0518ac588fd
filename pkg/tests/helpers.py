"""Shared random generators and independent oracles for the test suite."""

import numpy as np

from folideform.dgla import DefiningCouple
from folideform.forms import TrigForm, TrigVectorField, dx, evaluate, index_sets, sin_mode, wedge


def random_form(domain, degree, bw, rng, real=False, scale=1.0):
    nsets = len(index_sets(domain.dim, degree))
    shape = (nsets,) + (2 * bw + 1,) * domain.dim
    coef = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * scale
    f = TrigForm(domain, degree, coef, bw, check=False)
    return f.real_part() if real else f


def random_field(domain, bw, rng, scale=1.0):
    return TrigVectorField([random_form(domain, 0, bw, rng, real=True, scale=scale) for _ in range(domain.dim)])


def random_integrable_couple(domain, rng, bw=1, scale=0.3):
    """gamma = ds + f(s) c.dx, X = d/ds on S^1 x T^(n-1); integrable for every f and c."""
    n = domain.dim
    coef = np.zeros((1,) + (2 * bw + 1,) * n, dtype=complex)
    line = (rng.standard_normal(2 * bw + 1) + 1j * rng.standard_normal(2 * bw + 1)) * scale
    coef[(0, slice(None)) + (bw,) * (n - 1)] = line
    f = TrigForm(domain, 0, coef, bw, check=False).real_part()
    cvec = rng.standard_normal(n - 1)
    gamma = dx(domain, 0)
    for i in range(1, n):
        gamma = gamma + wedge(f, dx(domain, i)) * float(cvec[i - 1])
    return DefiningCouple(gamma, TrigVectorField.coordinate(domain, 0))


def product_couple(domain):
    return DefiningCouple(dx(domain, 0), TrigVectorField.coordinate(domain, 0))


def contact_couple(domain):
    """cos(2 pi z) dx + sin(2 pi z) dy with X = cos(2 pi z) d/dx + sin(2 pi z) d/dy."""
    from folideform.forms import cos_mode
    cz = cos_mode(domain, (0, 0, 1))
    sz = sin_mode(domain, (0, 0, 1))
    gamma = wedge(cz, dx(domain, 0)) + wedge(sz, dx(domain, 1))
    return DefiningCouple(gamma, TrigVectorField([cz, sz, TrigForm.zero(domain, 0)]))


def point_values(a, points):
    """Coefficient values by direct summation of the term dictionary (no FFT, no box layout)."""
    sets = index_sets(a.domain.dim, a.degree)
    out = np.zeros((len(sets), len(points)), dtype=complex)
    for (k, I), c in a.terms.items():
        out[sets.index(I)] += c * np.exp(2j * np.pi * (points @ np.array(k, dtype=float)))
    return out


def fd_gradient(f, points, h=1e-5):
    """Central-difference gradient of a function form at points, shape (n, P)."""
    n = f.domain.dim
    grads = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        grads.append((evaluate(f, points + e)[0] - evaluate(f, points - e)[0]) / (2 * h))
    return np.array(grads)
