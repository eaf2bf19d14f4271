import numpy as np
import pytest

from sdereach import kernels
from sdereach.kernels import (
    KIND_HORIZON,
    KIND_INSTANT,
    PackedPolys,
    active_backend,
    eval_packed,
    pack_polys,
    simulate_outcomes,
)
from sdereach.poly import parse

HAVE_NUMBA = kernels.numba is not None


def test_pack_and_eval_matches_polynomial():
    rng = np.random.default_rng(3)
    polys = [parse("1 - 2*x1^2 + x1*x2", nvars=2), parse("0.5*x2^3", nvars=2),
             parse("0", nvars=2)]
    packed = pack_polys(polys, 2)
    assert packed.npolys == 3
    for _ in range(30):
        x = rng.uniform(-2, 2, size=2)
        for i, p in enumerate(polys):
            assert eval_packed(packed, i, x) == pytest.approx(p.evaluate(x.tolist()), abs=1e-12)


def test_pack_rejects_time_and_dimension():
    with pytest.raises(ValueError, match="time-independent"):
        pack_polys([parse("t + x1")], 1)
    with pytest.raises(ValueError, match="expected 2"):
        pack_polys([parse("x1")], 2)


def test_batch_eval_is_bitwise_equal_to_scalar():
    rng = np.random.default_rng(4)
    p = parse("0.3*x1^3 - 1.7*x1*x2 + 0.01*x2^2 - 2", nvars=2)
    packed = pack_polys([p], 2)
    X = rng.uniform(-3, 3, size=(200, 2))
    batch = kernels._eval_poly_batch(packed.coefs, packed.exps, packed.offsets, 0, X, 2)
    for j in range(len(X)):
        assert batch[j] == eval_packed(packed, 0, X[j])  # exact, not approx


def ou_setup():
    polys = [parse(s, nvars=1) for s in ("-x1", "1", "4 - x1^2", "x1 - 1.5")]
    return pack_polys(polys, 1)


def _noise(seed, paths, steps, k=1):
    out = np.empty((paths, steps, k))
    for p in range(paths):
        key = np.array([seed, p], dtype=np.uint64)
        out[p] = np.random.Generator(np.random.Philox(key=key)).standard_normal((steps, k))
    return out


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_bitwise_identical_outcomes():
    packed = ou_setup()
    noise = _noise(99, 2000, 100)
    x0 = np.array([0.0])
    for kind in (KIND_HORIZON, KIND_INSTANT):
        a = simulate_outcomes(x0, packed, 1, 1, noise, 0.01, 0.01, 0.0, kind, "numba")
        b = simulate_outcomes(x0, packed, 1, 1, noise, 0.01, 0.01, 0.0, kind, "numpy")
        assert np.array_equal(a, b)
        assert set(np.unique(a)) <= {0, 1}


def test_outcomes_independent_of_batch_split():
    packed = ou_setup()
    noise = _noise(5, 600, 50)
    x0 = np.array([0.0])
    full = simulate_outcomes(x0, packed, 1, 1, noise, 0.02, 0.02, 0.0, KIND_HORIZON, "numpy")
    parts = [
        simulate_outcomes(x0, packed, 1, 1, noise[i:i + 200], 0.02, 0.02, 0.0,
                          KIND_HORIZON, "numpy")
        for i in range(0, 600, 200)
    ]
    assert np.array_equal(full, np.concatenate(parts))


def test_env_flag_forces_numpy(monkeypatch):
    monkeypatch.setenv("SDEREACH_FORCE_NUMPY", "1")
    assert active_backend() == "numpy"
    monkeypatch.delenv("SDEREACH_FORCE_NUMPY")
    assert active_backend() in ("numba", "numpy")


def test_unknown_backend_rejected():
    packed = ou_setup()
    with pytest.raises(ValueError, match="unknown backend"):
        simulate_outcomes(np.array([0.0]), packed, 1, 1, np.zeros((1, 2, 1)),
                          0.1, 0.1, 0.0, KIND_HORIZON, "fortran")


def test_zero_noise_channels():
    # k = 0: purely deterministic dynamics flow toward the target
    polys = [parse(s, nvars=1) for s in ("1", "4 - x1^2", "x1 - 1")]
    packed = pack_polys(polys, 1)
    noise = np.empty((3, 200, 0))
    out = simulate_outcomes(np.array([0.0]), packed, 1, 0, noise, 0.01, 0.01, 0.0,
                            KIND_HORIZON, "numpy")
    assert np.array_equal(out, np.ones(3, dtype=np.int8))
