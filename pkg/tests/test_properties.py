import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lnfno import autodiff as ad
from lnfno.autodiff import Tensor
from lnfno.cli import CONFIG_KEYS, RunConfig
from lnfno.fieldgen import positive_trace
from lnfno.nodf import Component, decode_nodf, encode_nodf
from lnfno.numerics import build_csr, fft_1d, fft_2d

finite = st.floats(-1e6, 1e6, allow_nan=False)
names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)


@st.composite
def containers(draw):
    n = draw(st.integers(1, 4))
    comps = []
    used = set()
    for role in draw(st.lists(st.sampled_from(["input", "output", "aux"]), min_size=1, max_size=4)):
        name = draw(names.filter(lambda s: s not in used))
        used.add(name)
        if role == "aux":
            dtype = draw(st.sampled_from([np.float64, np.uint32, np.uint8]))
            shape = draw(hnp.array_shapes(min_dims=0, max_dims=3, max_side=4))
        else:
            dtype = np.float64
            shape = (n,) + draw(hnp.array_shapes(min_dims=0, max_dims=2, max_side=4))
        comps.append(Component(name, role, draw(hnp.arrays(dtype, shape))))
    keys = draw(st.lists(names.filter(lambda s: "=" not in s and "\n" not in s), max_size=4, unique=True))
    meta = {k: draw(st.text(max_size=10).filter(lambda s: "\n" not in s)) for k in keys}
    return comps, meta


@settings(max_examples=60, deadline=None)
@given(containers())
def test_nodf_round_trip(case):
    comps, meta = case
    buf = encode_nodf(comps, meta)
    back, meta2 = decode_nodf(buf)
    assert meta2 == {str(k): str(v) for k, v in meta.items()}
    for a, b in zip(comps, back):
        assert (a.name, a.role, a.data.shape, a.data.dtype) == (b.name, b.role, b.data.shape, b.data.dtype)
        assert a.data.tobytes() == b.data.tobytes()
    assert encode_nodf(back, meta2) == buf


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 32]), st.integers(0, 2 ** 31))
def test_fft_inverse_and_parseval(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    X = fft_1d(x)
    np.testing.assert_allclose(fft_1d(X, inverse=True), x, atol=1e-12)
    assert np.isclose(np.sum(np.abs(X) ** 2) / n, np.sum(np.abs(x) ** 2), rtol=1e-12)
    Y = rng.standard_normal((n, n))
    np.testing.assert_allclose(fft_2d(fft_2d(Y), inverse=True).real, Y, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5), finite),
                                                       max_size=30))
def test_csr_matches_dense(n_rows, n_cols, trips):
    trips = [(r % n_rows, c % n_cols, v) for r, c, v in trips]
    dense = np.zeros((n_rows, n_cols))
    for r, c, v in trips:
        dense[r, c] += v
    rows = [t[0] for t in trips]
    cols = [t[1] for t in trips]
    vals = [t[2] for t in trips]
    A = build_csr(rows, cols, vals, n_rows, n_cols)
    x = np.arange(1.0, n_cols + 1)
    np.testing.assert_allclose(A.matvec(x), dense @ x, rtol=1e-12, atol=1e-6)


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 40), elements=st.floats(-50, 50)),
       st.floats(0.01, 0.99))
def test_positive_trace_respects_floor(s, floor):
    p = positive_trace(s, floor)
    assert p.min() >= floor - 1e-12
    if s.min() >= -(1 - floor):
        np.testing.assert_array_equal(p, 1.0 + s)


values = {"str": st.from_regex(r"[A-Za-z0-9_./-]{1,10}", fullmatch=True),
          "int": st.integers(0, 10 ** 6).map(str),
          "float": st.floats(1e-8, 10.0).map(repr)}


@st.composite
def config_texts(draw):
    keys = draw(st.lists(st.sampled_from(sorted(CONFIG_KEYS)), unique=True, max_size=8))
    lines = []
    for k in keys:
        kind = CONFIG_KEYS[k].__name__
        lines.append(f"{k}={draw(values[kind])}\n")
        if draw(st.booleans()):
            lines.append("# note\n")
    return "".join(lines)


@settings(max_examples=60, deadline=None)
@given(config_texts())
def test_config_dump_round_trip(text):
    cfg = RunConfig.parse(text)
    assert cfg.dump() == text
    again = RunConfig.parse(cfg.dump())
    assert again.values == cfg.values


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=st.floats(-3, 3)))
def test_sum_of_squares_gradient_is_twice_input(x):
    t = Tensor(x, requires_grad=True)
    ad.backward(ad.tsum(ad.binary_ewise(t, t, "mul")))
    np.testing.assert_allclose(t.grad, 2 * x)
