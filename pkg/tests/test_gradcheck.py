import pandas as pd
import pytest

from tssl_snn import ConfigurationError, GradcheckConfig, run_gradcheck


def test_loss_case_writes_report(tmp_path):
    config = GradcheckConfig(case="loss", n_traces=3, output_dir=str(tmp_path / "gradcheck"))
    report = run_gradcheck(config)
    assert report.passed
    assert [c.name for c in report.checks] == ["loss", "loss-order"]

    text = (tmp_path / "gradcheck" / "gradcheck-report.txt").read_text()
    assert text.splitlines()[0] == "gradcheck seed=0"
    assert text.splitlines()[-1].split() == ["overall", "PASS"]

    results = pd.read_csv(tmp_path / "gradcheck" / "results" / "seed0_loss-gradcheck.csv")
    assert list(results.columns) == ["loss", "loss-order"]


def test_phi_case(tmp_path):
    report = run_gradcheck(
        GradcheckConfig(case="phi", n_instances=25, seed=4, output_dir=str(tmp_path))
    )
    assert [c.name for c in report.checks] == ["phi"]
    assert report.passed


def test_unknown_case(tmp_path):
    with pytest.raises(ConfigurationError):
        run_gradcheck(GradcheckConfig(case="hessian", output_dir=str(tmp_path)))
