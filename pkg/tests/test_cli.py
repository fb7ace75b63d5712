import csv
import json

import numpy as np
import pytest

from jointps import dataio
from jointps.cli import main
from jointps.model import ObservedDataset, ValidationError
from jointps.simlab import generate_dataset, scenario_params

from conftest import small_dataset

FAST = ["--chains", "2", "--iters", "60", "--burnin", "20"]


def _write(path, text):
    path.write_text(text)
    return path


def test_ingest_three_rows(tmp_path):
    f = _write(tmp_path / "d.csv", "z,d,y1,y2\n1,1,2.5,1\n1,0,3.0,0\n0,0,1.25,1\n")
    data = dataio.ingest_csv(f)
    assert data.n == 3 and data.z.tolist() == [1, 1, 0] and data.y2.tolist() == [1, 0, 1]


def test_ingest_without_secondary(tmp_path):
    f = _write(tmp_path / "d.csv", "z,d,y1\n1,1,2.5\n0,0,1.0\n")
    assert dataio.ingest_csv(f).y2 is None


def test_ingest_noncompliance_row_reported(tmp_path):
    f = _write(tmp_path / "d.csv", "z,d,y1\n1,1,2.5\n0,1,1.0\n")
    with pytest.raises(ValidationError, match="row 2: one-sided noncompliance"):
        dataio.ingest_csv(f)


def test_ingest_column_mapping_and_log(tmp_path):
    f = _write(tmp_path / "d.csv", "assign,took,dep\n1,1,2.0\n0,0,4.0\n")
    data = dataio.ingest_csv(f, {"z": "assign", "d": "took", "y1": "dep"}, log_y1=True)
    assert data.y1 == pytest.approx(np.log([2.0, 4.0]))
    with pytest.raises(ValidationError, match="unknown column"):
        dataio.ingest_csv(f, {"z": "assign", "d": "took", "y1": "dep", "y2": "other"})


def test_ingest_errors(tmp_path):
    with pytest.raises(ValidationError, match="malformed"):
        dataio.ingest_csv(_write(tmp_path / "a.csv", "z,d,y1\n1,1,abc\n"))
    with pytest.raises(ValidationError, match="0 or 1"):
        dataio.ingest_csv(_write(tmp_path / "b.csv", "z,d,y1\n2,0,1\n"))
    with pytest.raises(ValidationError, match="y1 > 0"):
        dataio.ingest_csv(_write(tmp_path / "c.csv", "z,d,y1\n1,1,0\n"), log_y1=True)


def test_ingest_missing_rows(tmp_path):
    f = _write(tmp_path / "d.csv", "z,d,y1\n1,1,2.5\n0,0,NA\n0,0,1.0\n")
    assert dataio.ingest_csv(f).n == 2
    with pytest.raises(ValidationError, match="rows 2"):
        dataio.ingest_csv(f, on_missing="error")


def test_dataset_round_trip(tmp_path):
    data = small_dataset(n=25)
    dataio.write_dataset_csv(data, tmp_path / "x.csv")
    back = dataio.ingest_csv(tmp_path / "x.csv")
    for a in ("z", "d", "y1", "y2"):
        assert np.array_equal(getattr(back, a), getattr(data, a))


@pytest.fixture(scope="module")
def scenario_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "s.csv"
    sim = generate_dataset(scenario_params("I"), 3)
    idx = np.r_[0:60, 300:360]
    dataio.write_dataset_csv(sim.data.subset(idx), p)
    return p


def _fit(out, csv_path, *extra):
    return main(["fit", "--input", str(csv_path), "--seed", "5", "--out", str(out), *FAST, *extra])


def test_fit_outputs_and_determinism(tmp_path, scenario_csv):
    assert _fit(tmp_path / "a", scenario_csv) == 0
    assert _fit(tmp_path / "b", scenario_csv) == 0
    for name in ("summary.csv", "summary.json", "psrf.csv", "draws_bivariate.csv", "kde_bivariate_tau_c.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_er_variant_has_no_tau_n_row(tmp_path, scenario_csv):
    assert _fit(tmp_path, scenario_csv, "--variant", "univariate-er", "--no-kde") == 0
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    names = {r["estimand"] for r in rows}
    assert "tau_c" in names and "tau_n" not in names


def test_summarize_reproduces_fit(tmp_path, scenario_csv):
    _fit(tmp_path / "fit", scenario_csv, "--no-kde")
    assert main(["summarize", str(tmp_path / "fit"), "--out", str(tmp_path / "re")]) == 0
    assert (tmp_path / "fit" / "summary.csv").read_bytes() == (tmp_path / "re" / "summary.csv").read_bytes()


def test_config_echo_reruns_identically(tmp_path, scenario_csv):
    _fit(tmp_path / "a", scenario_csv, "--variant", "univariate", "--no-kde")
    cfg = tmp_path / "a" / "config.json"
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()


def test_unknown_config_key(tmp_path, scenario_csv):
    cfg = _write(tmp_path / "c.json", json.dumps({"seed": 1, "input": str(scenario_csv), "colour": "red"}))
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_simulate_emits_data(tmp_path):
    assert main(["simulate", "--scenario", "II", "--seed", "4", "--emit-data", "--out", str(tmp_path)]) == 0
    data = dataio.ingest_csv(tmp_path / "scenario_II_seed4.csv")
    assert data.n == 600 and (data.z == 1).sum() == 300


def test_ppc_smoke(tmp_path, scenario_csv):
    _fit(tmp_path / "fit", scenario_csv, "--variant", "univariate", "--no-kde")
    rc = main(["ppc", "--input", str(scenario_csv), "--seed", "1", "--draws", str(tmp_path / "fit"),
               "--K", "1", "--J", "1", "--out", str(tmp_path / "ppc")])
    assert rc == 0
    with open(tmp_path / "ppc" / "ppc.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["PPPV", "SPPV", "ModifiedSPPV"]
    for r in rows:
        for k in ("SI_c", "Chi2", "KS"):
            assert 0.0 <= float(r[k]) <= 1.0


def test_exit_codes(tmp_path, scenario_csv):
    bad = _write(tmp_path / "bad.csv", "z,d,y1\n0,1,1.0\n")
    assert main(["fit", "--input", str(bad), "--seed", "1", "--out", str(tmp_path / "o")]) == 1
    assert main(["fit", "--input", str(tmp_path / "missing.csv"), "--seed", "1", "--out", str(tmp_path / "o")]) == 1
    assert main(["fit", "--input", str(scenario_csv), "--out", str(tmp_path / "o")]) == 1  # no seed
    rc = main(["ppc", "--input", str(scenario_csv), "--seed", "1", "--variant", "univariate",
               "--J", "100000", "--K", "1", *FAST, "--out", str(tmp_path / "p")])
    assert rc == 1


def test_strict_exit_on_poor_convergence(tmp_path, scenario_csv):
    args = ["--variant", "univariate", "--chains", "3", "--iters", "6", "--burnin", "1", "--no-kde", "--no-dump"]
    rc = _fit(tmp_path / "a", scenario_csv, *args, "--strict")
    with open(tmp_path / "a" / "psrf.csv") as fh:
        flagged = any(r["flag"] == "high" for r in csv.DictReader(fh))
    assert flagged and rc == 3
    assert _fit(tmp_path / "b", scenario_csv, *args) == 0
