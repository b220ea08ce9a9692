import io
import json

import pytest

from nafaudit.cli import dispatch
from nafaudit.fixtures import kappa_fixture, worked_pair
from nafaudit.models import save_model


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = dispatch(argv, out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def files(tmp_path):
    p, q = worked_pair()
    paths = {"p": tmp_path / "p.json", "q": tmp_path / "q.json"}
    save_model(p, paths["p"])
    save_model(q, paths["q"])
    kp, ksafe = kappa_fixture()
    for name, m in [("kp", kp), ("k1", ksafe.models[0]), ("k2", ksafe.models[1])]:
        paths[name] = tmp_path / f"{name}.json"
        save_model(m, paths[name])
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("a b a b c\nb a c a b\n\na c b a\n")
    paths["corpus"] = corpus
    paths["dir"] = tmp_path
    return {k: str(v) for k, v in paths.items()}


def test_train_writes_model(files):
    out_path = files["dir"] + "/m.json"
    code, out, err = run(["train", "--corpus", files["corpus"], "--order", "1", "--output", out_path])
    assert code == 0, err
    report = json.loads(out)
    assert report["format"] == "naf-report/1"
    assert report["result"]["documents"] == 3
    assert files["corpus"] in report["inputs"]


def test_exact(files):
    code, out, _ = run(["exact", "--model", files["p"], "--safe", files["q"], "--length", "2", "--divergence", "kl"])
    assert code == 0
    assert json.loads(out)["result"]["k_x"] == pytest.approx(0.287682, abs=1e-6)


def test_exact_ensemble(files):
    code, out, _ = run(["exact", "--ensemble", "min", "--safe", files["p"], "--safe", files["q"], "--length", "3"])
    assert code == 0
    assert json.loads(out)["result"]["k_x"] == pytest.approx(0.863046, abs=1e-6)


def test_audit_byte_identical(files):
    argv = ["audit", "--model", files["p"], "--safe", files["q"], "--length", "3",
            "--samples", "500", "--seed", "7", "--alpha", "explicit:0.015625", "--delta", "0.1"]
    first = run(argv)
    second = run(argv)
    assert first[0] == 0
    assert first[1] == second[1]
    est = json.loads(first[1])["result"]["estimate"]
    assert est["seed"] == 7 and est["half_width"] > 0


def test_audit_seed_changes_output(files):
    base = ["audit", "--model", files["p"], "--safe", files["q"], "--length", "2", "--samples", "50"]
    assert run(base + ["--seed", "1"])[1] != run(base + ["--seed", "2"])[1]


def test_audit_floor_violation_is_runtime_error(files):
    code, out, err = run(["audit", "--model", files["p"], "--safe", files["q"], "--length", "3",
                          "--samples", "100", "--alpha", "explicit:0.5"])
    assert code == 2
    assert json.loads(out)["error"]["type"] == "FloorViolated"
    assert "FloorViolated" in err


def test_protect_sample_modes(files):
    for mode in ["cp-delta-min", "cp-delta-geo", "cp-delta-reject"]:
        code, out, _ = run(["protect", "sample", "--mode", mode, "--safe", files["p"], "--safe", files["q"],
                            "--length", "2", "--seed", "3"])
        assert code == 0
        assert len(json.loads(out)["result"]["ids"]) == 2
    code, out, _ = run(["protect", "sample", "--mode", "cp-kappa", "--model", files["kp"], "--safe", files["k1"],
                        "--safe", files["k2"], "--kappa", "1", "--length", "1"])
    assert code == 0
    assert json.loads(out)["result"]["tokens"] == ["t2"]


def test_protect_sample_exhausted(files):
    code, out, _ = run(["protect", "sample", "--mode", "cp-kappa", "--model", files["p"], "--safe", files["q"],
                        "--kappa", "-1", "--length", "2", "--max-attempts", "5"])
    assert code == 2
    assert json.loads(out)["error"]["type"] == "RejectionExhausted"


def test_protect_certify(files):
    code, out, _ = run(["protect", "certify", "--model", files["p"], "--safe", files["q"], "--kappa", "0",
                        "--length", "1", "--samples", "2000", "--seed", "1"])
    assert code == 0
    cert = json.loads(out)["result"]["certificate"]
    assert 0.45 < cert["nu_hat"] < 0.55 and cert["bounded"]


def test_sweep_temperature_and_kappa(files):
    code, out, _ = run(["sweep", "--model", files["p"], "--safe", files["q"], "--length", "2",
                        "--param", "temperature", "--grid", "1,2", "--samples", "200"])
    assert code == 0
    assert [pt["value"] for pt in json.loads(out)["result"]["points"]] == [1.0, 2.0]
    code, out, _ = run(["sweep", "--model", files["kp"], "--safe", files["k1"], "--safe", files["k2"],
                        "--length", "1", "--param", "kappa", "--grid", "1,3"])
    assert code == 0
    pts = json.loads(out)["result"]["points"]
    assert pts[0]["k_x"] > 1 and pts[0]["nu"] == pytest.approx(0.1)


def test_memorize_corpus(files):
    code, out, err = run(["memorize", "--corpus", files["corpus"], "--units", "0,1", "--times", "3",
                          "--order", "1", "--prompt-len", "1", "--gen-len", "3"])
    assert code == 0, err
    mem = json.loads(out)["result"]["memorization"]
    assert set(mem["means"]) == {"base", "cp_delta_min", "cp_delta_geo", "cp_kappa"}


def test_dpg(files):
    code, out, _ = run(["dpg", "--model-a", files["p"], "--model-b", files["q"], "--length", "1"])
    assert code == 0
    assert json.loads(out)["result"]["epsilon"] == pytest.approx(0.693147, abs=1e-6)


@pytest.mark.parametrize("argv", [
    ["audit", "--length", "2", "--samples", "10"],
    ["audit", "--model", "missing.json", "--safe", "missing.json", "--length", "2", "--samples", "10"],
    ["bogus"],
    ["exact", "--model", "x", "--safe", "x", "--length", "two"],
])
def test_validation_errors_exit_1_and_print_nothing(argv):
    code, out, err = run(argv)
    assert code == 1
    assert out == ""
    assert err.startswith("naf: error:")


def test_bad_alpha_and_divergence(files):
    base = ["audit", "--model", files["p"], "--safe", files["q"], "--length", "2", "--samples", "10"]
    assert run(base + ["--alpha", "magic:0.1"])[0] == 1
    assert run(base + ["--divergence", "max"])[0] == 1


def test_enumeration_cap_is_runtime_error(files):
    code, out, _ = run(["exact", "--model", files["p"], "--safe", files["q"], "--length", "5", "--cap", "10"])
    assert code == 2
    assert json.loads(out)["error"]["type"] == "EnumerationTooLarge"


def test_timing_flag_only_when_requested(files):
    argv = ["dpg", "--model-a", files["p"], "--model-b", files["q"], "--length", "1"]
    assert "wall_clock_seconds" not in json.loads(run(argv)[1])
    assert "wall_clock_seconds" in json.loads(run(["--timing"] + argv)[1])


def test_memorize_fixture_subset():
    code, out, err = run(["memorize", "--fixture", "--seed", "0", "--schemes", "base,cp_delta_min", "--times", "10"])
    assert code == 0, err
    means = json.loads(out)["result"]["memorization"]["means"]
    assert means["cp_delta_min"] > means["base"]
