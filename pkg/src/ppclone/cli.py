"""Command-line front end: classification, gg-system analysis, clone and
pp-definability queries, builtin examples, and certificate checking.

Exit codes: 0 success or verified, 1 negative answer or failed verification,
2 usage or input error, 3 unknown because a cap was hit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import __version__
from .clones import (IdentityWitness, OperationTable, find_cyclic, find_pseudo_siggers, find_siggers4,
                     find_siggers6, find_taylor, find_wnu, is_polymorphism, polymorphisms)
from .csp import CapExceeded
from .freeterms import (IdentitySystem, house_identities, projection_satisfiable, stripped_siggers,
                        theta_invariance_check)
from .ggsystem import GGSystem, run_pseudoloop_pipeline, two_triangles_system
from .ppdef import (InterpretationCertificate, Param, PPFormula, Atom, eval_pp, make_certificate, pp_definable,
                    verify_interpretation)
from .relstruct import (FiniteStructure, ParseError, clique, core_of, endomorphisms, is_core, is_isomorphic,
                        twin_triangles_structure)

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_UNKNOWN = 0, 1, 2, 3
ENV_PREFIX = "PPCLONE_"
REPORT_SCHEMA = 1


class UsageError(Exception):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class AnalysisReport:
    command: str
    verdict: str
    input_digest: str
    caps: dict
    checks: dict = field(default_factory=dict)
    input: Optional[dict] = None

    def to_json(self) -> dict:
        out = {"schema": REPORT_SCHEMA, "command": self.command, "verdict": self.verdict,
               "input_digest": self.input_digest, "caps": self.caps, "checks": self.checks}
        if self.input is not None:
            out["input"] = self.input
        return out

    @classmethod
    def from_json(cls, data) -> "AnalysisReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise ParseError(f"report schema {data.get('schema')!r} is not {REPORT_SCHEMA}")
        return cls(data["command"], data["verdict"], data["input_digest"], data["caps"],
                   data.get("checks", {}), data.get("input"))

    def reverify(self) -> bool:
        """Re-check every witness and certificate embedded in the report."""
        if self.command == "classify" and self.input is not None:
            a = FiniteStructure.from_json(self.input)
            w = self.checks.get("siggers4_on_core")
            if isinstance(w, dict) and "witness" in w:
                core = a.induced(self.checks["core"]["vertices"])
                if not IdentityWitness.from_json(w["witness"]).verify(core, range(core.domain_size)):
                    return False
            ps = self.checks.get("pseudo_siggers")
            if isinstance(ps, dict) and "witness" in ps:
                if not IdentityWitness.from_json(ps["witness"]).verify(a):
                    return False
            return True
        if self.command == "ggsystem analyze" and self.input is not None:
            from .ggsystem import PseudoloopWitness

            s = GGSystem.from_json(self.input)
            res = self.checks["pipeline"]
            if "witness" in res:
                return PseudoloopWitness.from_json(res["witness"]).verify(s)
            if "certificate" in res:
                cert = InterpretationCertificate.from_json(res["certificate"])
                return verify_interpretation(s.expanded, clique(3), cert)[0]
            return res["outcome"] == "unknown"
        return True


# -- argument handling ------------------------------------------------------------------------

def _env(name: str, default, kind=int):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"{ENV_PREFIX}{name}={raw!r} is not a valid {kind.__name__}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--arity-cap", type=int, default=argparse.SUPPRESS,
                        help="largest arity for identity searches (default 4)")
    common.add_argument("--depth-cap", type=int, default=argparse.SUPPRESS,
                        help="existential variables for formula synthesis (default 3)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for sampled checks (default 0)")
    common.add_argument("--format", choices=("json", "text"), default=argparse.SUPPRESS,
                        help="output format (default json)")

    p = argparse.ArgumentParser(prog="ppclone", parents=[common],
                                description="Polymorphism clones, pp-interpretations and gg-systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[common], help="core plus idempotent Siggers search")
    c.add_argument("structure")

    g = sub.add_parser("ggsystem", parents=[common], help="gg-system analysis")
    gsub = g.add_subparsers(dest="action", required=True)
    ga = gsub.add_parser("analyze", parents=[common], help="pseudoloop or K3 interpretation")
    ga.add_argument("system")
    ga.add_argument("--save-certificate", metavar="PATH")

    cl = sub.add_parser("clone", parents=[common], help="polymorphism queries")
    csub = cl.add_subparsers(dest="action", required=True)
    cp = csub.add_parser("polymorphisms", parents=[common], help="list polymorphisms of one arity")
    cp.add_argument("structure")
    cp.add_argument("--arity", type=int, required=True)
    cp.add_argument("--limit", type=int, default=None)
    cp.add_argument("--count-only", action="store_true")
    cf = csub.add_parser("find", parents=[common], help="search for an operation satisfying identities")
    cf.add_argument("structure")
    cf.add_argument("--kind", required=True,
                    choices=("siggers4", "siggers6", "wnu", "cyclic", "pseudo_siggers", "taylor"))
    cf.add_argument("--arity", type=int, default=None, help="arity for wnu and cyclic")
    cf.add_argument("--idempotent", action="store_true", help="fix every element")

    pp = sub.add_parser("ppdef", parents=[common], help="pp-formulas and definability")
    psub = pp.add_subparsers(dest="action", required=True)
    pe = psub.add_parser("eval", parents=[common], help="evaluate a formula")
    pe.add_argument("structure")
    pe.add_argument("formula")
    pd = psub.add_parser("definable", parents=[common], help="decide pp-definability of a relation")
    pd.add_argument("structure")
    pd.add_argument("relation", help="JSON list of tuples")
    pd.add_argument("--with-params", action="store_true")

    ex = sub.add_parser("example", parents=[common], help="builtin example suites")
    ex.add_argument("name", choices=("example-5.1", "example-6.1", "two-triangles"))
    ex.add_argument("--save-certificate", metavar="PATH")

    v = sub.add_parser("verify", parents=[common], help="re-check a certificate or witness")
    v.add_argument("certificate")
    v.add_argument("structure")
    v.add_argument("target", nargs="?")
    return p


def _settings(ns) -> dict:
    s = {
        "arity_cap": getattr(ns, "arity_cap", None) or _env("ARITY_CAP", 4),
        "depth_cap": getattr(ns, "depth_cap", None) or _env("DEPTH_CAP", 3),
        "threads": getattr(ns, "threads", None) or _env("THREADS", 1),
        "seed": getattr(ns, "seed", None) if getattr(ns, "seed", None) is not None else _env("SEED", 0),
        "format": getattr(ns, "format", None) or _env("FORMAT", "json", str),
    }
    if s["format"] not in ("json", "text"):
        raise UsageError(f"format must be json or text, not {s['format']!r}")
    if s["arity_cap"] < 1 or s["depth_cap"] < 0 or s["threads"] < 1:
        raise UsageError("caps must be positive")
    return s


def _load_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _load_structure(path: str) -> tuple[FiniteStructure, dict]:
    data = _load_json(path)
    try:
        return FiniteStructure.from_json(data), data
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _caps(s: dict) -> dict:
    return {"arity_cap": s["arity_cap"], "depth_cap": s["depth_cap"], "seed": s["seed"]}


def _run_checks(checks: list[tuple[str, Callable[[], dict]]], threads: int) -> dict:
    # results are assembled in the listed order whatever the completion order
    if threads <= 1:
        return {name: fn() for name, fn in checks}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [(name, pool.submit(fn)) for name, fn in checks]
        return {name: fut.result() for name, fut in futures}


# -- commands -----------------------------------------------------------------------------------

def cmd_classify(ns, s) -> tuple[AnalysisReport, int]:
    a, raw = _load_structure(ns.structure)
    checks: dict = {}
    verdict = "unknown"
    try:
        core, retraction, verts = core_of(a)
        checks["core"] = {"vertices": list(verts), "is_core": len(verts) == a.domain_size,
                          "retraction": list(retraction)}
        if s["arity_cap"] < 4:
            checks["siggers4_on_core"] = {"result": "skipped", "reason": "arity cap below 4"}
        else:
            w = find_siggers4(core, constants=range(core.domain_size))
            if w is None:
                checks["siggers4_on_core"] = {"result": "absent", "exhaustive": True}
                verdict = "hardness side"
            else:
                checks["siggers4_on_core"] = {"result": "found", "witness": w.to_json()}
                ps = find_pseudo_siggers(a)
                checks["pseudo_siggers"] = {"result": "found", "witness": ps.to_json()}
                verdict = "siggers witness"
    except CapExceeded as exc:
        checks["cap"] = str(exc)
    rep = AnalysisReport("classify", verdict, digest(raw), _caps(s), checks, raw)
    return rep, EXIT_UNKNOWN if verdict == "unknown" else EXIT_OK


def cmd_ggsystem(ns, s) -> tuple[AnalysisReport, int]:
    raw = _load_json(ns.system)
    try:
        system = GGSystem.from_json(raw)
    except (ParseError, ValueError) as exc:
        raise ParseError(f"{ns.system}: {exc}") from None
    try:
        res = run_pseudoloop_pipeline(system)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if res.certificate is not None and ns.save_certificate:
        _save(ns.save_certificate, res.certificate.to_json())
    rep = AnalysisReport("ggsystem analyze", res.outcome, digest(raw), _caps(s), {"pipeline": res.to_json()}, raw)
    return rep, EXIT_UNKNOWN if res.outcome == "unknown" else EXIT_OK


def cmd_clone(ns, s) -> tuple[AnalysisReport, int]:
    a, raw = _load_structure(ns.structure)
    checks: dict = {}
    if ns.action == "polymorphisms":
        ops = []
        count = 0
        try:
            for op in polymorphisms(a, ns.arity):
                count += 1
                if not ns.count_only:
                    ops.append(list(op.values))
                if ns.limit is not None and count >= ns.limit:
                    break
        except CapExceeded as exc:
            rep = AnalysisReport("clone polymorphisms", "unknown", digest(raw), _caps(s), {"cap": str(exc)})
            return rep, EXIT_UNKNOWN
        checks = {"arity": ns.arity, "count": count, "complete": ns.limit is None or count < ns.limit}
        if not ns.count_only:
            checks["operations"] = ops
        return AnalysisReport("clone polymorphisms", "ok", digest(raw), _caps(s), checks), EXIT_OK
    consts = range(a.domain_size) if ns.idempotent else None
    kind = ns.kind
    try:
        if kind in ("wnu", "cyclic"):
            arity = ns.arity or s["arity_cap"]
            if arity > s["arity_cap"]:
                raise UsageError(f"arity {arity} exceeds --arity-cap {s['arity_cap']}")
            w = (find_wnu if kind == "wnu" else find_cyclic)(a, arity, consts)
        elif kind == "siggers4":
            w = find_siggers4(a, consts)
        elif kind == "siggers6":
            if s["arity_cap"] < 6:
                raise CapExceeded("6-ary search needs --arity-cap 6")
            w = find_siggers6(a, consts)
        elif kind == "pseudo_siggers":
            w = find_pseudo_siggers(a)
        else:
            w = find_taylor(a, consts, arity_cap=s["arity_cap"])
    except CapExceeded as exc:
        return AnalysisReport(f"clone find {kind}", "unknown", digest(raw), _caps(s), {"cap": str(exc)}), EXIT_UNKNOWN
    if w is None:
        return AnalysisReport(f"clone find {kind}", "absent", digest(raw), _caps(s), {}), EXIT_NEGATIVE
    return AnalysisReport(f"clone find {kind}", "found", digest(raw), _caps(s), {"witness": w.to_json()}), EXIT_OK


def cmd_ppdef(ns, s) -> tuple[AnalysisReport, int]:
    a, raw = _load_structure(ns.structure)
    if ns.action == "eval":
        try:
            phi = PPFormula.from_json(_load_json(ns.formula))
            rel = eval_pp(a, phi)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{ns.formula}: {exc}") from None
        checks = {"formula": str(phi), "tuples": sorted(list(t) for t in rel)}
        return AnalysisReport("ppdef eval", "ok", digest(raw), _caps(s), checks), EXIT_OK
    tuples = _load_json(ns.relation)
    if not isinstance(tuples, list) or not all(isinstance(t, list) for t in tuples):
        raise ParseError(f"{ns.relation}: expected a JSON list of tuples")
    try:
        ok, phi = pp_definable(a, tuples, with_params=ns.with_params,
                               arity=len(tuples[0]) if tuples else 1, depth_cap=s["depth_cap"])
    except CapExceeded as exc:
        return AnalysisReport("ppdef definable", "unknown", digest(raw), _caps(s), {"cap": str(exc)}), EXIT_UNKNOWN
    checks = {"definable": ok}
    if phi is not None:
        checks["formula"] = phi.to_json()
    return (AnalysisReport("ppdef definable", "yes" if ok else "no", digest(raw), _caps(s), checks),
            EXIT_OK if ok else EXIT_NEGATIVE)


# -- builtin examples ----------------------------------------------------------------------

def twin_alpha() -> OperationTable:
    """Swap the two copies."""
    return OperationTable.from_function(6, 1, lambda x: (x + 3) % 6)


def twin_s() -> OperationTable:
    """Third argument when the first two share a copy, otherwise the first."""
    return OperationTable.from_function(6, 3, lambda x, y, z: z if x // 3 == y // 3 else x)


def slice_certificate(c: int) -> InterpretationCertificate:
    """Dimension-1 certificate: the S-neighbours of ``c`` with the edge relation R."""
    dom = PPFormula(1, 0, (Atom("S", (0, Param(c))),))
    eq = PPFormula(2, 0, (Atom("=", (0, 1)),))
    edge = PPFormula(2, 0, (Atom("R", (0, 1)),))
    other = sorted(x for x in range(6) if x // 3 != c // 3)
    return make_certificate(1, dom, eq, {"R": edge}, {(x,): i for i, x in enumerate(other)})


def example_51_checks(seed: int) -> list[tuple[str, Callable[[], dict]]]:
    a = twin_triangles_structure()
    alpha, s = twin_alpha(), twin_s()
    k3 = clique(3)

    def core():
        ends = endomorphisms(a)
        return {"is_core": is_core(a), "endomorphisms": len(ends),
                "all_bijective": all(len(set(m)) == 6 for m in ends)}

    def polys():
        return {"alpha": is_polymorphism(a, alpha), "s": is_polymorphism(a, s)}

    def identity():
        pairs = [(x, y) for x in range(6) for y in range(6)]
        bad = [(x, y) for x, y in pairs if s(x, x, y) != s(y, alpha(y), x) or s(x, x, y) != y]
        return {"pairs_checked": len(pairs), "failures": bad, "holds": not bad}

    def slices():
        out = []
        for c in range(6):
            phi = PPFormula(1, 0, (Atom("S", (0, Param(c))),))
            verts = sorted(v for (v,) in eval_pp(a, phi))
            sub = a.induced(verts)
            iso = is_isomorphic(FiniteStructure.build(3, {"R": sub.rel("R")}, {"R": 2}), k3) is not None
            ok, diag = verify_interpretation(a, k3, slice_certificate(c))
            out.append({"parameter": c, "set": verts, "isomorphic_to_k3": iso, "certificate": ok})
        return {"slices": out, "all": all(x["isomorphic_to_k3"] and x["certificate"] for x in out)}

    def definable():
        res = []
        for c in range(6):
            rel = sorted({(x,) for x in range(6) if (x, c) in a.rel("S")})
            res.append(pp_definable(a, rel, with_params=True)[0])
        return {"with_parameters": res, "all": all(res)}

    def nontrivial():
        ids = IdentitySystem.parse("s(x,x,y) ≈ s(y,a(y),x)")
        return {"projection_satisfiable": projection_satisfiable(ids) is not None}

    def pseudo():
        w = find_pseudo_siggers(a)
        return {"pseudo_siggers": "found" if w is not None else "absent"}

    return [("core", core), ("polymorphisms", polys), ("identity", identity), ("slices", slices),
            ("definable_with_parameters", definable), ("identity_nontrivial", nontrivial),
            ("pseudo_siggers", pseudo)]


def example_61_checks(seed: int) -> list[tuple[str, Callable[[], dict]]]:
    def theta_suite():
        checked, violations = theta_invariance_check(seed, 1000)
        return {"steps": checked, "violations": violations}

    def house():
        return {"projection_satisfiable": projection_satisfiable(house_identities()) is not None}

    def siggers():
        return {"projection_satisfiable": projection_satisfiable(stripped_siggers()) is not None}

    return [("theta_invariance", theta_suite), ("house_identities", house), ("stripped_siggers", siggers)]


def cmd_example(ns, s) -> tuple[AnalysisReport, int]:
    name = ns.name
    cert = None
    if name == "example-5.1":
        checks = _run_checks(example_51_checks(s["seed"]), s["threads"])
        ok = (checks["core"]["is_core"] and all(checks["polymorphisms"].values()) and checks["identity"]["holds"]
              and checks["slices"]["all"] and checks["definable_with_parameters"]["all"]
              and not checks["identity_nontrivial"]["projection_satisfiable"])
        cert = slice_certificate(0)
    elif name == "example-6.1":
        checks = _run_checks(example_61_checks(s["seed"]), s["threads"])
        ok = (checks["theta_invariance"]["violations"] == 0
              and not checks["house_identities"]["projection_satisfiable"]
              and not checks["stripped_siggers"]["projection_satisfiable"])
    else:
        system = two_triangles_system()
        res = run_pseudoloop_pipeline(system)
        ok = res.outcome == "interpretation"
        if ok:
            cert = res.certificate
            ok = verify_interpretation(system.expanded, clique(3), cert)[0]
        checks = {"pipeline": res.to_json(), "verified": ok}
    if cert is not None and ns.save_certificate:
        _save(ns.save_certificate, cert.to_json())
    rep = AnalysisReport(f"example {name}", "pass" if ok else "fail", digest({"example": name}), _caps(s), checks)
    return rep, EXIT_OK if ok else EXIT_NEGATIVE


def cmd_verify(ns, s) -> tuple[AnalysisReport, int]:
    data = _load_json(ns.certificate)
    a, raw = _load_structure(ns.structure)
    if isinstance(data, dict) and "kind" in data and "operations" in data:
        try:
            w = IdentityWitness.from_json(data)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{ns.certificate}: {exc}") from None
        ok = w.verify(a)
        diag = "ok" if ok else "witness does not satisfy its identities or is not a polymorphism"
    else:
        if ns.target is None:
            raise UsageError("verifying an interpretation certificate needs a target structure")
        target, _ = _load_structure(ns.target)
        try:
            cert = InterpretationCertificate.from_json(data)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{ns.certificate}: {exc}") from None
        ok, diag = verify_interpretation(a, target, cert)
    rep = AnalysisReport("verify", "verified" if ok else "rejected", digest(data), _caps(s), {"diagnostic": diag})
    if not ok:
        print(f"verification failed: {diag}", file=sys.stderr)
    return rep, EXIT_OK if ok else EXIT_NEGATIVE


def _save(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _text(report: AnalysisReport) -> str:
    lines = [f"{report.command}: {report.verdict}"]
    for name, value in report.checks.items():
        if isinstance(value, dict):
            short = {k: v for k, v in value.items() if not isinstance(v, (dict, list)) or k == "failures"}
            lines.append(f"  {name}: {canonical_json(short)}")
        else:
            lines.append(f"  {name}: {value}")
    return "\n".join(lines)


COMMANDS = {"classify": cmd_classify, "ggsystem": cmd_ggsystem, "clone": cmd_clone, "ppdef": cmd_ppdef,
            "example": cmd_example, "verify": cmd_verify}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        s = _settings(ns)
        report, code = COMMANDS[ns.command](ns, s)
    except (UsageError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if s["format"] == "json":
        print(json.dumps(report.to_json(), sort_keys=True, indent=2))
    else:
        print(_text(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
