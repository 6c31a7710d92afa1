import numpy as np
import pytest

from glioinv import experiments as ex
from glioinv.anatomy import TensorMode
from glioinv.field import Grid, ScalarField
from glioinv.field import TimeGrid
from glioinv.forward import SplitStepper, make_halfstep


def small_spec(**kw):
    base = dict(n=32, n_steps=4, c_d_list=(0.2,), eta_list=(0.01, 0.05), per_axis=3)
    base.update(kw)
    return ex.preset(2, ndim=2, **base)


@pytest.fixture(scope="module")
def target():
    return ex.make_target(small_spec())


# -- metrics ----------------------------------------------------------------------

def test_rel_error_oracle():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert ex.rel_error(a, b) == pytest.approx(np.sqrt(2))
    assert ex.rel_error(b, b) == 0.0
    with pytest.raises(ValueError):
        ex.rel_error(a, np.zeros(2))


def test_jaccard_oracle():
    assert ex.jaccard(np.array([1, 1, 0, 0]), np.array([0, 1, 1, 0])) == pytest.approx(1 / 3)
    assert ex.jaccard(np.array([1, 1, 0]), np.array([1, 0, 0])) == pytest.approx(0.5)
    with pytest.warns(UserWarning):
        assert ex.jaccard(np.zeros(3), np.zeros(3)) == 1.0


def test_kf_error_oracle():
    assert ex.kf_error(0.11, 0.1) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ex.kf_error(0.1, 0.0)


def test_margin_keeps_invisible_band():
    g = Grid.cube(4)
    v = np.zeros(g.dims)
    v[0, :] = [0.005, 0.01, 0.19, 0.2]
    m = ex.margin(ScalarField(g, v), 0.2).values[0]
    np.testing.assert_array_equal(m, [0.0, 0.01, 0.19, 0.0])


# -- noise --------------------------------------------------------------------------

def test_noise_has_exact_relative_norm_and_support():
    g = Grid.cube(32)
    x, y = g.coords()
    d = ScalarField(g, 0.5 * np.exp(-((x - 3) ** 2 + (y - 3) ** 2)))
    sup = d.values >= 0.01
    noisy = ex.add_noise(d, 0.05, 7, clamp=False, support=sup)
    n = noisy.values - d.values
    assert np.linalg.norm(n) == pytest.approx(0.05 * np.linalg.norm(d.values), rel=1e-12)
    assert np.all(n[~sup] == 0)
    clamped = ex.add_noise(d, 0.5, 7, support=sup)
    assert clamped.values.min() >= 0 and clamped.values.max() <= 1
    assert ex.add_noise(d, 0.0, 7).values is d.values or np.array_equal(ex.add_noise(d, 0.0, 7).values, d.values)
    with pytest.raises(ValueError):
        ex.add_noise(d, -0.1)


def test_noise_is_seeded():
    g = Grid.cube(16)
    d = ScalarField(g, np.full(g.dims, 0.5))
    a, b = ex.add_noise(d, 0.1, 3), ex.add_noise(d, 0.1, 3)
    c = ex.add_noise(d, 0.1, 4)
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    s1 = ex.cell_seed(0, 0.2, 0.05).generate_state(2)
    s2 = ex.cell_seed(0, 0.2, 0.10).generate_state(2)
    assert not np.array_equal(s1, s2)


# -- specs and targets --------------------------------------------------------------

def test_presets():
    assert ex.preset(1).invert_kf is False and ex.preset(2).invert_kf is True
    assert ex.preset(3).ndim == 2 and len(ex.preset(3).foci) == 2
    assert ex.preset(4).tensor_mode is TensorMode.PRINCIPAL
    assert ex.preset(2).ndim == 3 and ex.preset(2).n == 32
    assert ex.preset(2, ndim=2).n == 64
    with pytest.raises(ValueError):
        ex.preset(5)
    with pytest.raises(ValueError):
        ex.preset(3, foci=(ex.Focus((0.5, 0.5)),))
    with pytest.raises(ValueError):
        small_spec(c_d_list=(1.2,))


def test_focus_outside_brain_rejected():
    with pytest.raises(ValueError):
        ex.make_target(small_spec(foci=(ex.Focus((0.02, 0.02)),)))


def test_target_semigroup(target):
    spec = target.spec
    tg = TimeGrid(spec.n_steps, 1.0)
    # the stepper directly: under-resolved tissue edges leave tiny negative values
    st = SplitStepper(target.grid, make_halfstep(target.grid, target.K, None, tg.dt), spec.rho, tg)
    again = st.forward(target.at(1).values)
    np.testing.assert_allclose(again.final.values, target.at(2).values, atol=1e-9)
    assert 0.9 < target.at(0).values.max() <= 1.0


def test_multifocal_target_has_two_maxima():
    t = ex.make_target(ex.preset(3, n=32, n_steps=4))
    v = t.at(0).values
    peaks = (v > 0.5) & (v >= np.maximum.reduce([np.roll(v, s, a) for a in (0, 1) for s in (1, -1)]))
    assert np.count_nonzero(peaks) == 2


def test_build_cell_masks_and_basis(target):
    cell = ex.build_cell(target, 0.2, 0.05)
    pb = cell.problem
    assert np.all(pb.mask0.mask == (cell.noisy0.values >= 0.2))
    assert np.all(pb.d0.values[~pb.mask0.mask] == 0)
    assert pb.basis.n_p == 9
    again = ex.build_cell(target, 0.2, 0.05)
    assert np.array_equal(again.noisy1.values, cell.noisy1.values)


# -- report -------------------------------------------------------------------------

def test_metrics_row_formatting():
    row = ex.MetricsRow(0.2, 0.05, 0.031, 0.04, 0.8, 0.03, 0.81, 0.05, 0.7, status="converged")
    assert row.csv_fields() == ["0.20", "0.05", "3.100e-02", "4.000e-02", "0.800", "3.000e-02",
                                "0.810", "5.000e-02", "0.700"]
    row.eps_kf = None
    assert row.csv_fields()[2] == ""
    assert ex.MetricsRow(0.1, 0.01, status="failed").csv_fields()[2:] == ["NA"] * 7


def test_run_testcase_report_is_deterministic_across_jobs(tmp_path):
    spec = small_spec()
    serial = ex.run_testcase(spec, out_dir=tmp_path / "a", slices=True)
    parallel = ex.run_testcase(spec, out_dir=tmp_path / "b", jobs=2)
    text = (tmp_path / "a" / "case2_report.csv").read_text()
    assert text == (tmp_path / "b" / "case2_report.csv").read_text()
    assert text.splitlines()[0] == ",".join(ex.REPORT_HEADER)
    assert len(text.splitlines()) == 3
    assert (tmp_path / "a" / "case2_NOTE.txt").read_text().strip() == ex.DISCLAIMER
    assert len(list((tmp_path / "a" / "slices").glob("*.pgm"))) == 12
    assert all(not r.missing for r in serial)
    assert [r.csv_fields() for r in serial] == [r.csv_fields() for r in parallel]


def test_pgm_orientation_and_contour(tmp_path):
    v = np.zeros((4, 3))
    v[3, 0] = 1.0  # largest x, smallest y
    path = tmp_path / "s.pgm"
    ex.write_pgm(path, v)
    raw = path.read_bytes()
    header = b"P5\n4 3\n255\n"
    assert raw.startswith(header)
    img = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(3, 4)
    assert img[2, 3] == 255 and img.sum() == 255
    v2 = np.full((6, 6), 0.1)
    v2[2:4, 2:4] = 0.5
    ex.write_pgm(path, v2, contour=0.3)
    img = np.frombuffer(path.read_bytes()[len(b"P5\n6 6\n255\n"):], dtype=np.uint8)
    assert np.count_nonzero(img == 255) == 4
    with pytest.raises(ValueError):
        ex.write_pgm(path, np.zeros((2, 2, 2)))


def test_spearman_helper():
    assert ex.spearman_nonnegative([1, 2, 3], [0.1, 0.2, 0.3])
    assert not ex.spearman_nonnegative([1, 2, 3], [0.3, 0.2, 0.1])
    assert ex.spearman_nonnegative([1, 2], [0.5, 0.5])
