import json

import numpy as np
import pytest

from dgms import studies
from dgms.errors import ConfigError


def small_cfg(**kw):
    base = dict(domain="unit-square", fine_level=4, coarse_levels=(1, 2))
    base.update(kw)
    return studies.StudyConfig.from_dict(base)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(domain="triangle")
    with pytest.raises(ConfigError):
        small_cfg(coarse_levels=(5,))
    with pytest.raises(ConfigError):
        studies.StudyConfig.from_dict({"no_such_key": 1})
    with pytest.raises(ConfigError):
        small_cfg(rhs="weird")


def test_config_hash_stable():
    a, b = small_cfg(), small_cfg()
    assert a.hash() == b.hash()
    assert a.hash() != small_cfg(fine_level=5).hash()


def test_localization_radius():
    assert studies.localization_radius(2, 2.0) == 4
    assert studies.localization_radius(3, 1.5) == 5
    assert studies.localization_radius(1, 0.1) == 1


def test_convergence_study_rows_and_slopes():
    res = studies.run_convergence_study(small_cfg(coarse_levels=(1, 2, 3)))
    assert len(res.rows) == 3
    errs = [r.err_energy_rel for r in res.rows]
    assert errs[-1] < errs[0]
    assert res.extras["slope_energy"] < 0.0
    for r in res.rows:
        assert r.Ndof == 4 * (1 << (2 * int(round(np.log2(1.0 / r.H)))))


def test_csv_schema_and_determinism(tmp_path):
    cfg = small_cfg()
    r1 = studies.run_convergence_study(cfg)
    r2 = studies.run_convergence_study(cfg)
    c1, c2 = studies.format_csv(r1), studies.format_csv(r2)
    assert c1.splitlines()[0] == studies.CSV_HEADER
    assert c1 == c2  # timings zeroed, numbers bit-identical

    files = studies.emit_outputs(r1, tmp_path, gnuplot=True)
    assert (tmp_path / "study.csv").read_text() == c1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash()
    assert "slope_energy" in manifest
    # timings survive in the manifest even when zeroed in the CSV
    assert any(row["t_correctors_s"] > 0.0 for row in manifest["rows"])
    assert (tmp_path / "plot.gp").exists()
    assert len(files) == 3


def test_nondeterministic_csv_keeps_timings():
    res = studies.run_convergence_study(small_cfg(deterministic_output=False))
    body = studies.format_csv(res).splitlines()[1]
    t_corr = float(body.split(",")[6])
    assert t_corr > 0.0


def test_localization_sweep_gap():
    cfg = small_cfg(coarse_levels=(2,), loc_constants=(1.0, 2.0))
    res = studies.run_localization_sweep(cfg)
    assert len(res.rows) == 2
    assert "2.0" in res.extras["gap_to_largest"]
    assert res.extras["gap_to_largest"]["2.0"] == 0.0


def test_decay_study():
    cfg = small_cfg(domain="unit-square", fine_level=5, coarse_levels=(3,))
    res = studies.run_decay_study(cfg)
    tails = res.extras["tails"]
    assert np.all(np.diff(tails) <= 0.0)
    assert res.extras["gamma"] is not None
    assert res.extras["gamma"] < 1.0


def test_qoi_study():
    cfg = small_cfg(coarse_levels=(1, 2), qoi_weight="indicator")
    res = studies.run_qoi_study(cfg)
    for gap, bound in zip(res.extras["gap"], res.extras["bound"]):
        # absolute slack covers levels where both sides sit at roundoff
        assert gap <= bound * (1.0 + 1e-8) + 1e-14


def test_stripes_study_completes():
    cfg = small_cfg(
        fine_level=5,
        coarse_levels=(1, 2),
        coefficient="stripes",
        coeff_period=2.0 ** -4,
    )
    res = studies.run_convergence_study(cfg)
    assert all(np.isfinite(r.err_energy_rel) for r in res.rows)
