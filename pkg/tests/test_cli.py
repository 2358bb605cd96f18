import json

import pytest

from ppclone.cli import (EXIT_NEGATIVE, EXIT_OK, EXIT_UNKNOWN, EXIT_USAGE, AnalysisReport, main)
from ppclone.ggsystem import GGSystem, two_triangles_system
from ppclone.ppdef import Atom, PPFormula
from ppclone.relstruct import clique, directed_cycle


@pytest.fixture
def files(tmp_path):
    def write(name, obj):
        p = tmp_path / name
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return str(p)
    return write


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify_verdicts(files, capsys):
    c3 = files("c3.json", directed_cycle(3).to_json())
    k3 = files("k3.json", clique(3).to_json())
    code, out, _ = run(capsys, "classify", c3)
    rep = AnalysisReport.from_json(json.loads(out))
    assert code == EXIT_OK and rep.verdict == "siggers witness" and rep.reverify()
    code, out, _ = run(capsys, "classify", k3)
    assert code == EXIT_OK and json.loads(out)["verdict"] == "hardness side"
    code, out, _ = run(capsys, "--arity-cap", "3", "classify", k3)
    assert code == EXIT_UNKNOWN and json.loads(out)["verdict"] == "unknown"


def test_output_is_deterministic(files, capsys):
    c3 = files("c3.json", directed_cycle(3).to_json())
    _, first, _ = run(capsys, "classify", c3, "--threads", "2")
    _, second, _ = run(capsys, "classify", c3)
    assert first == second


def test_text_format_and_env(files, capsys, monkeypatch):
    k3 = files("k3.json", clique(3).to_json())
    code, out, _ = run(capsys, "classify", k3, "--format", "text")
    assert code == EXIT_OK and out.startswith("classify: hardness side")
    monkeypatch.setenv("PPCLONE_FORMAT", "text")
    _, out, _ = run(capsys, "classify", k3)
    assert out.startswith("classify:")
    monkeypatch.setenv("PPCLONE_FORMAT", "yaml")
    code, _, err = run(capsys, "classify", k3)
    assert code == EXIT_USAGE and "format" in err


def test_clone_commands(files, capsys):
    k3 = files("k3.json", clique(3).to_json())
    code, out, _ = run(capsys, "clone", "polymorphisms", k3, "--arity", "3", "--count-only")
    assert code == EXIT_OK and json.loads(out)["checks"]["count"] == 18
    code, out, _ = run(capsys, "clone", "polymorphisms", k3, "--arity", "2", "--limit", "5")
    checks = json.loads(out)["checks"]
    assert checks["count"] == 5 and not checks["complete"] and len(checks["operations"]) == 5
    code, out, _ = run(capsys, "clone", "find", k3, "--kind", "wnu", "--arity", "3")
    assert code == EXIT_NEGATIVE and json.loads(out)["verdict"] == "absent"
    c3 = files("c3.json", directed_cycle(3).to_json())
    code, out, _ = run(capsys, "clone", "find", c3, "--kind", "siggers4", "--idempotent")
    assert code == EXIT_OK
    wit = files("w.json", json.loads(out)["checks"]["witness"])
    code, out, _ = run(capsys, "verify", wit, c3)
    assert code == EXIT_OK and json.loads(out)["verdict"] == "verified"
    code, _, _ = run(capsys, "clone", "find", c3, "--kind", "siggers6")
    assert code == EXIT_UNKNOWN


def test_ppdef_commands(files, capsys):
    k3 = files("k3.json", clique(3).to_json())
    two_step = files("phi.json", PPFormula(2, 1, (Atom("R", (0, 2)), Atom("R", (2, 1)))).to_json())
    code, out, _ = run(capsys, "ppdef", "eval", k3, two_step)
    assert code == EXIT_OK and len(json.loads(out)["checks"]["tuples"]) == 9
    subset = files("sub.json", [[0], [1]])
    code, out, _ = run(capsys, "ppdef", "definable", k3, subset)
    assert code == EXIT_NEGATIVE and json.loads(out)["verdict"] == "no"
    code, out, _ = run(capsys, "ppdef", "definable", k3, subset, "--with-params")
    assert code == EXIT_OK and json.loads(out)["verdict"] == "yes"


def test_ggsystem_and_certificate_verification(files, capsys, tmp_path):
    tt = two_triangles_system()
    sysfile = files("tt.json", tt.to_json())
    cert = tmp_path / "cert.json"
    code, out, _ = run(capsys, "ggsystem", "analyze", sysfile, "--save-certificate", str(cert))
    rep = AnalysisReport.from_json(json.loads(out))
    assert code == EXIT_OK and rep.verdict == "interpretation" and rep.reverify()
    expanded = files("exp.json", tt.expanded.to_json())
    k3 = files("k3.json", clique(3).to_json())
    code, _, _ = run(capsys, "verify", str(cert), expanded, k3)
    assert code == EXIT_OK
    # an empty edge formula interprets the full relation, which has loops
    data = json.loads(cert.read_text())
    data["relation_formulas"]["R"] = {"free": 2, "exists": 0, "atoms": []}
    bad = files("bad.json", data)
    code, _, err = run(capsys, "verify", bad, expanded, k3)
    assert code == EXIT_NEGATIVE and err.startswith("verification failed:")
    code, _, err = run(capsys, "verify", str(cert), expanded)
    assert code == EXIT_USAGE and "target" in err


def test_ggsystem_pseudoloop(files, capsys):
    from ppclone.permgroup import symmetric_group
    s = GGSystem(clique(3), symmetric_group(3))
    code, out, _ = run(capsys, "ggsystem", "analyze", files("s.json", s.to_json()))
    assert code == EXIT_OK and json.loads(out)["verdict"] == "pseudoloop"


@pytest.mark.parametrize("name", ["example-5.1", "example-6.1", "two-triangles"])
def test_examples(name, capsys):
    code, out, _ = run(capsys, "example", name)
    assert code == EXIT_OK and json.loads(out)["verdict"] == "pass"


def test_usage_errors(files, capsys):
    assert run(capsys)[0] == EXIT_USAGE
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    code, _, err = run(capsys, "classify", files("broken.json", '{"domain": 3,'))
    assert code == EXIT_USAGE and "line 1" in err
    code, _, err = run(capsys, "classify", "/nonexistent/file.json")
    assert code == EXIT_USAGE
    assert run(capsys, "--version")[0] == EXIT_OK
