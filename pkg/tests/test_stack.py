import math

import numpy as np
import pytest

from stack import (ASI_NM, N_ASI, N_SIO2, SIO2_NM, Layer, StackSpec, builtin_detector_stack,
                   dbr_layers, multipass_path_length, dbr_mirror_stack, reflectance_spectrum,
                   single_pass_absorption, tmm_response)
from util import DbrOrdering, ValidationError

# Placeholder MoSi index for tests only; not a measured value.
MOSI_N, MOSI_K = 5.0, 4.0


def field_matching(stack):
    """
    Independent oracle: solve the boundary conditions of all interfaces at
    once as one linear system. Return (R, T).

    Unknowns: reflected amplitude, forward/backward amplitudes at the
    entry of every layer, transmitted amplitude.
    """
    n = [complex(stack.ambient_n)] + [layer.index for layer in stack.layers] + [complex(stack.substrate_n)]
    d = [0.0] + [layer.thickness for layer in stack.layers]
    count = len(stack.layers)
    size = 2 * count + 2
    reflected, transmitted = 0, size - 1
    matrix = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)

    # Interface `region` joins region and region + 1. Row 2*region matches
    # the field E, row 2*region + 1 matches n * (forward - backward).
    for region in range(count + 1):
        field_row, flux_row = 2 * region, 2 * region + 1
        if region == 0:
            rhs[field_row] -= 1.0
            rhs[flux_row] -= n[0]
            matrix[field_row, reflected] += 1.0
            matrix[flux_row, reflected] -= n[0]
        else:
            phase = np.exp(1j * 2 * np.pi * n[region] * d[region] / stack.wavelength)
            forward, backward = 2 * region - 1, 2 * region
            matrix[field_row, forward] += phase
            matrix[field_row, backward] += 1 / phase
            matrix[flux_row, forward] += n[region] * phase
            matrix[flux_row, backward] -= n[region] / phase
        following = region + 1
        if following == count + 1:
            matrix[field_row, transmitted] -= 1.0
            matrix[flux_row, transmitted] -= n[following]
        else:
            forward, backward = 2 * following - 1, 2 * following
            matrix[field_row, forward] -= 1.0
            matrix[field_row, backward] -= 1.0
            matrix[flux_row, forward] -= n[following]
            matrix[flux_row, backward] += n[following]
    solution = np.linalg.solve(matrix, rhs)
    reflectance = abs(solution[0]) ** 2
    transmittance = abs(solution[-1]) ** 2 * stack.substrate_n / stack.ambient_n
    return reflectance, transmittance


def random_stack(rng, lossy=True, max_layers=5):
    layers = [
        Layer(rng.uniform(5, 400), rng.uniform(1.0, 4.0), rng.uniform(0, 1.0) if lossy else 0.0)
        for _ in range(rng.integers(1, max_layers + 1))
    ]
    return StackSpec(layers, rng.uniform(400, 2000), rng.uniform(1.0, 2.0), rng.uniform(1.0, 3.5))


def test_homogeneous_space():
    """
    A vacuum layer in vacuum neither reflects nor absorbs.
    """
    response = tmm_response(StackSpec([Layer(100.0, 1.0)], 1550.0, 1.0, 1.0))
    assert response.R == pytest.approx(0.0, abs=1e-15)
    assert response.T == pytest.approx(1.0, abs=1e-15)
    assert response.A == pytest.approx(0.0, abs=1e-15)


def test_quarter_wave_closed_form():
    n0, n1, ns = 1.0, 1.453, 2.735
    stack = StackSpec([Layer(1550.0 / (4 * n1), n1)], 1550.0, n0, ns)
    expected = ((n0 * ns - n1 ** 2) / (n0 * ns + n1 ** 2)) ** 2
    assert tmm_response(stack).R == pytest.approx(expected, abs=1e-9)


def test_dbr_mirror_reflects():
    """
    The 13-layer mirror reflects more than 99 % at 1550 nm, in agreement
    with the field-matching oracle.
    """
    stack = dbr_mirror_stack()
    response = tmm_response(stack)
    reflectance, transmittance = field_matching(stack)
    assert response.R > 0.99
    assert response.R == pytest.approx(reflectance, abs=1e-9)
    assert response.T == pytest.approx(transmittance, abs=1e-9)


@pytest.mark.parametrize("ordering", list(DbrOrdering))
def test_builtin_stack_mirror_side(ordering):
    stack = builtin_detector_stack(mosi_n=MOSI_N, mosi_k=MOSI_K, ordering=ordering)
    mirror = StackSpec(stack.layers[5:], stack.wavelength, N_SIO2, stack.substrate_n)
    response = tmm_response(mirror)
    assert response.R > 0.99
    assert response.R == pytest.approx(field_matching(mirror)[0], abs=1e-9)


def test_tmm_matches_field_matching():
    rng = np.random.default_rng(3)
    for _ in range(200):
        stack = random_stack(rng)
        response = tmm_response(stack)
        reflectance, transmittance = field_matching(stack)
        assert response.R == pytest.approx(reflectance, abs=1e-9)
        assert response.T == pytest.approx(transmittance, abs=1e-9)


def test_energy_conservation():
    rng = np.random.default_rng(4)
    for index in range(1000):
        response = tmm_response(random_stack(rng, lossy=index % 2 == 0))
        assert abs(response.R + response.T + response.A - 1) < 1e-9
        assert abs(math.fsum(response.per_layer_absorption) - response.A) < 1e-9
        for value in (response.R, response.T, response.A):
            assert 0 <= value <= 1


def test_lossless_stack_does_not_absorb():
    rng = np.random.default_rng(6)
    for _ in range(200):
        response = tmm_response(random_stack(rng, lossy=False))
        assert response.A < 1e-12
        assert all(abs(value) < 1e-12 for value in response.per_layer_absorption)


def test_reversed_symmetric_stack():
    rng = np.random.default_rng(8)
    for _ in range(50):
        half = [Layer(rng.uniform(10, 300), rng.uniform(1.2, 3.5)) for _ in range(3)]
        layers = half + half[-2::-1]
        stack = StackSpec(layers, 1550.0, 1.45, 1.45)
        assert tmm_response(stack.reversed()).R == pytest.approx(tmm_response(stack).R, abs=1e-12)


def test_half_wave_layer_is_absent():
    """
    A lossless layer of optical thickness lambda/2 changes nothing.
    """
    rng = np.random.default_rng(9)
    for _ in range(100):
        stack = random_stack(rng)
        n = rng.uniform(1.2, 3.5)
        position = rng.integers(0, len(stack.layers) + 1)
        layers = list(stack.layers)
        layers.insert(position, Layer(stack.wavelength / (2 * n), n))
        padded = StackSpec(layers, stack.wavelength, stack.ambient_n, stack.substrate_n)
        before, after = tmm_response(stack), tmm_response(padded)
        assert after.R == pytest.approx(before.R, abs=1e-9)
        assert after.T == pytest.approx(before.T, abs=1e-9)


def test_absorbing_film_takes_the_absorption():
    stack = builtin_detector_stack(mosi_n=MOSI_N, mosi_k=MOSI_K)
    response = tmm_response(stack)
    names = [layer.name for layer in stack.layers]
    absorber = names.index("MoSi")
    assert response.per_layer_absorption[absorber] == pytest.approx(response.A, abs=1e-9)
    assert response.A > 0


def test_builtin_stack_layout():
    stack = builtin_detector_stack(mosi_n=MOSI_N, mosi_k=MOSI_K)
    assert len(stack.layers) == 18
    assert stack.wavelength == 1550.0
    assert [layer.thickness for layer in stack.layers[:5]] == [66.7, 122.4, 78.5, 2.0, 4.1]
    assert stack.total_thickness == pytest.approx(3000, abs=200)


@pytest.mark.parametrize(("ordering", "expected"),
                         [(DbrOrdering.HIGH_INDEX_FIRST, 7 * ASI_NM + 6 * SIO2_NM),
                          (DbrOrdering.LOW_INDEX_FIRST, 7 * SIO2_NM + 6 * ASI_NM)])
def test_dbr_thickness(ordering, expected):
    layers = dbr_layers(ordering)
    assert len(layers) == 13
    assert math.fsum(layer.thickness for layer in layers) == pytest.approx(expected)
    first_n = N_ASI if ordering == DbrOrdering.HIGH_INDEX_FIRST else N_SIO2
    assert layers[0].n == first_n


def test_builtin_stack_needs_mosi_index():
    with pytest.raises(TypeError):
        builtin_detector_stack()


@pytest.mark.parametrize(("absorption", "path", "expected"),
                         [(1.0, 3.0, 3.0),
                          (0.5, 3.0, 6.0),
                          (0.01, 3.0, 300.0)])
def test_multipass_path_length(absorption, path, expected):
    assert multipass_path_length(absorption, path) == pytest.approx(expected)


@pytest.mark.parametrize(("absorption", "path"), [(0.0, 3.0), (1.5, 3.0), (0.5, 0.0)])
def test_multipass_path_length_rejects(absorption, path):
    with pytest.raises(ValidationError):
        multipass_path_length(absorption, path)


def test_single_pass_absorption():
    film = Layer(4.1, MOSI_N, MOSI_K)
    expected = 1 - math.exp(-4 * math.pi * MOSI_K * 4.1 / 1550.0)
    assert single_pass_absorption(film, 1550.0) == pytest.approx(expected)
    assert single_pass_absorption(Layer(100.0, 1.5), 1550.0) == 0.0


def test_reflectance_spectrum():
    stack = dbr_mirror_stack()
    responses = reflectance_spectrum(stack, [1450.0, 1550.0, 1650.0])
    assert len(responses) == 3
    assert responses[1] == tmm_response(stack)


@pytest.mark.parametrize("kwargs", [{"thickness": 0, "n": 1.5},
                                    {"thickness": 10, "n": 0},
                                    {"thickness": 10, "n": 1.5, "k": -0.1}])
def test_invalid_layers(kwargs):
    with pytest.raises(ValidationError):
        Layer(**kwargs)


def test_stack_json_round_trip():
    stack = builtin_detector_stack(mosi_n=MOSI_N, mosi_k=MOSI_K)
    data = stack.as_dict()
    assert data["layers"][4] == {"thickness_nm": 4.1, "n": MOSI_N, "k": MOSI_K, "name": "MoSi"}
    assert StackSpec.from_dict(data) == stack


def test_reversed_swaps_media():
    stack = StackSpec([Layer(10.0, 2.0), Layer(20.0, 3.0)], 1550.0, 1.0, 3.476)
    flipped = stack.reversed()
    assert flipped.ambient_n == 3.476
    assert flipped.substrate_n == 1.0
    assert [layer.thickness for layer in flipped.layers] == [20.0, 10.0]
