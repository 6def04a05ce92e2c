import numpy as np
import pytest

from lnfno.datagen import BENCHMARKS, BenchmarkSpec, generate, verify_dataset, worker_count
from lnfno.errors import ConfigurationError, VerificationError
from lnfno.nodf import by_name, decode_nodf, encode_nodf

TINY = {
    "laplace": dict(res=11),
    "burgers": dict(res=16, fine_res=64, n_t=4, T=0.1, dt=1e-3),
    "darcy_smooth": dict(res=9, fine_res=17),
    "pb_square": dict(res=9),
    "pb_source": dict(res=9),
    "pb_fem": dict(),
    "pb_3d": dict(res=5),
    "ns": dict(res=16, n_t=2, T=0.02, dt=1e-3),
    "pnp": dict(res=9),
}

SHAPES = {
    "laplace": {"g": (40,), "u": (121,), "sources": (10, 3)},
    "burgers": {"u0": (16,), "u": (16, 4)},
    "darcy_smooth": {"a": (9, 9), "u": (81,)},
    "pb_square": {"g": (32,), "u": (81,)},
    "pb_source": {"g": (32,), "f": (9, 9), "u": (81,)},
    "pb_3d": {"g": (98,), "u": (125,)},
    "ns": {"w0": (16, 16), "w": (16, 16, 2)},
    "pnp": {"g_phi": (32,), "g_cp": (32,), "g_cm": (32,), "phi": (81,), "c_plus": (81,), "c_minus": (81,)},
}


@pytest.mark.parametrize("benchmark", BENCHMARKS)
def test_generate_verify_and_store(benchmark):
    spec = BenchmarkSpec(benchmark, n_samples=3, seed=1, **TINY[benchmark])
    comps, meta = generate(spec, workers=1, timestamp="t0")
    for name, shape in SHAPES.get(benchmark, {}).items():
        assert by_name(comps)[name].data.shape == (3,) + shape
    report = verify_dataset(comps, meta, n_check=3)
    assert report["passed"] and len(report["checked"]) == 3
    back, meta2 = decode_nodf(encode_nodf(comps, meta))
    assert meta2 == meta
    for a, b in zip(comps, back):
        assert a.data.tobytes() == b.data.tobytes()
    assert BenchmarkSpec.from_metadata(meta) == spec


def test_generation_independent_of_worker_count():
    spec = BenchmarkSpec("pb_square", n_samples=4, seed=2, res=9)
    a = encode_nodf(*generate(spec, workers=1, timestamp="t"))
    b = encode_nodf(*generate(spec, workers=2, timestamp="t"))
    assert a == b


def test_seed_changes_data():
    a, _ = generate(BenchmarkSpec("laplace", n_samples=2, seed=0, res=9), workers=1)
    b, _ = generate(BenchmarkSpec("laplace", n_samples=2, seed=1, res=9), workers=1)
    assert not np.allclose(a[0].data, b[0].data)


def test_verify_reports_corrupted_samples():
    comps, meta = generate(BenchmarkSpec("pb_square", n_samples=3, res=9), workers=1, timestamp="t")
    by_name(comps)["u"].data[1, 40] += 0.5
    with pytest.raises(VerificationError) as exc:
        verify_dataset(comps, meta, n_check=3)
    assert exc.value.indices == [1]


def test_spec_defaults_and_validation():
    spec = BenchmarkSpec("burgers")
    assert (spec.res, spec.fine_res, spec.n_t) == (64, 512, 100)
    with pytest.raises(ConfigurationError):
        BenchmarkSpec("nope")
    with pytest.raises(ConfigurationError):
        BenchmarkSpec("laplace", n_samples=0)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("NODF_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("NODF_THREADS", "x")
    with pytest.raises(ConfigurationError):
        worker_count()
