"""Five-dimension static quality scoring, the independent LLM judge, and
their blended final score with letter grading."""

from __future__ import annotations

import ast
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import JudgeUnparseable
from .fortran import FortranAnalysis
from .gateway import LlmRequest
from .guardrails import DEVITO_API, Violation, _bound_names, lint_api

log = logging.getLogger(__name__)

DIMENSIONS = ("execution", "structure", "api", "parameters", "fidelity")

# static dimension weights: recovered from the reference validation rows by
# least squares (see tests); the 0.30/0.25/0.25 split of the 0.80 mass over
# execution/structure/api mirrors the judge rubric, since every reference
# row has those three at 1.0 and cannot pin the split itself
STATIC_WEIGHTS: Dict[str, float] = {
    "execution": 0.30,
    "structure": 0.25,
    "api": 0.25,
    "parameters": 0.10,
    "fidelity": 0.10,
}
BLEND_LAMBDA = 0.5

GRADE_THRESHOLDS = (("A", 0.80), ("B", 0.65), ("C", 0.50), ("D", 0.35))

JUDGE_SYSTEM = (
    "You are an independent code quality judge for Fortran-to-Devito "
    "conversions. Score strictly and answer with one line: a score between "
    "0 and 1, then a dash, then a one-sentence justification."
)

JUDGE_RUBRIC = """\
Evaluate the converted Devito code against the original Fortran program on
four weighted criteria:
- execution success (30%): the code runs without errors;
- code structure (25%): Devito core components are complete and well formed;
- mathematical logic (25%): the solution is valid within the same PDE family;
- API usage (20%): Devito API calls are appropriate and current.
Weigh the criteria internally and output only the final score in [0, 1]
with a one-line justification."""

CORE_COMPONENTS = (
    ("Grid", r"\bGrid\s*\("),
    ("Function", r"\b(?:Time)?Function\s*\("),
    ("Eq", r"\bEq\s*\("),
    ("Operator", r"\bOperator\s*\("),
)

_KNOWN_MODULES = {
    "devito", "numpy", "np", "math", "sys", "os", "time", "argparse",
    "matplotlib", "scipy", "json",
}


@dataclass
class DimensionScores:
    execution: float
    structure: float
    api: float
    parameters: float
    fidelity: float

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSIONS}


@dataclass
class QualityReport:
    dims: DimensionScores
    traditional: float
    llm_judge: float
    final: float
    grade: str
    confidence: float
    duration_s: float
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {
            "dimensions": self.dims.as_dict(),
            "traditional": self.traditional,
            "llm_judge": self.llm_judge,
            "final": self.final,
            "grade": self.grade,
            "confidence": self.confidence,
            "duration_s": self.duration_s,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# Static dimensions
# ---------------------------------------------------------------------------

def _execution_score(code: str, exec_report: Optional[Dict], notes: List[str]) -> float:
    if exec_report is not None:
        return 1.0 if exec_report.get("phase") == "ok" else 0.0
    notes.append("execution scored in parse+import fallback mode (no runner configured)")
    try:
        tree = ast.parse(code)
    except SyntaxError:
        return 0.0
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            if node.module == "devito":
                for alias in node.names:
                    if alias.name != "*" and alias.name not in DEVITO_API:
                        return 0.0
            elif node.module and node.module.split(".")[0] not in _KNOWN_MODULES:
                return 0.0
        elif isinstance(node, ast.Import):
            for alias in node.names:
                if alias.name.split(".")[0] not in _KNOWN_MODULES:
                    return 0.0
    bound = _bound_names(tree)
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and isinstance(node.ctx, ast.Load) and node.id not in bound:
            return 0.0
    return 1.0


def _structure_score(code: str) -> float:
    present = sum(1 for _, pattern in CORE_COMPONENTS if re.search(pattern, code))
    return present / len(CORE_COMPONENTS)


def _api_score(guardrail_report: Sequence[Violation]) -> float:
    denylist_errors = sum(1 for v in guardrail_report if v.severity == "error")
    return 1.0 - min(1.0, denylist_errors / 4.0)


def _code_numbers(code: str) -> List[float]:
    numbers: List[float] = []
    try:
        tree = ast.parse(code)
    except SyntaxError:
        for m in re.finditer(r"(?<![\w.])(\d+(?:\.\d+)?(?:e-?\d+)?)", code):
            numbers.append(float(m.group(1)))
        return numbers
    for node in ast.walk(tree):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            numbers.append(float(node.value))
    return numbers


def _parameters_score(code: str, analysis: Optional[FortranAnalysis]) -> float:
    if analysis is None or not analysis.parameters:
        return 1.0
    numbers = _code_numbers(code)
    matched = 0
    for value in analysis.parameters.values():
        if any(abs(n - value) <= 1e-9 * max(1.0, abs(value)) for n in numbers):
            matched += 1
    return matched / len(analysis.parameters)


def _detect_code_traits(code: str) -> Dict[str, Optional[object]]:
    traits: Dict[str, Optional[object]] = {
        "dims": None, "pde": None, "scheme": None, "bcs": set(),
    }
    m = re.search(r"Grid\s*\(\s*shape\s*=\s*\(([^)]*)\)", code)
    if m:
        entries = [e for e in m.group(1).split(",") if e.strip()]
        traits["dims"] = len(entries)

    has_dt2 = re.search(r"\.dt2\b", code) is not None
    has_dt = re.search(r"\.dt\b", code) is not None
    has_timefn = re.search(r"\bTimeFunction\s*\(", code) is not None
    upwind = re.search(r"first_derivative\s*\([^)]*side\s*=", code) is not None
    if has_dt2:
        traits["pde"] = "hyperbolic"
    elif upwind:
        traits["pde"] = "hyperbolic"
    elif has_dt:
        traits["pde"] = "parabolic"
    elif not has_timefn and re.search(r"\blaplace\b", code):
        traits["pde"] = "elliptic"

    if upwind:
        traits["scheme"] = "upwind"
    elif re.search(r"forward\s*\.\s*laplace|0\.5\s*\*.*laplace", code):
        traits["scheme"] = "crank_nicolson"
    elif re.search(r"\.laplace\b|\.dx2\b|\.dy2\b", code):
        traits["scheme"] = "central"

    bcs = traits["bcs"]
    for m in re.finditer(r"Eq\s*\(\s*\w+(?:\.forward)?\.subs\s*\(\s*\{[^}]*symbolic_(min|max)[^)]*\)\s*,\s*(.+?)\)\s*$",
                         code, re.MULTILINE):
        rhs = m.group(2)
        if "symbolic_m" in rhs:
            bcs.add("periodic")
        elif re.match(r"^[-+]?\d", rhs.strip()):
            bcs.add("dirichlet")
        else:
            bcs.add("neumann")
    if re.search(r"\bdamp\w*\b", code):
        bcs.add("absorbing")
    return traits


def _fidelity_score(code: str, analysis: Optional[FortranAnalysis]) -> float:
    """Weighted slot match between the source analysis and what the
    generated code statically reveals: pde 0.3, dims 0.3, scheme 0.2, bcs
    0.2. Undetectable slots earn half credit."""
    if analysis is None:
        return 1.0
    traits = _detect_code_traits(code)

    def slot(expected, got, match_fn=None) -> float:
        if expected in (None, "unknown"):
            return 0.5
        if got is None:
            return 0.5
        if match_fn:
            return match_fn(expected, got)
        return 1.0 if expected == got else 0.0

    pde = slot(analysis.pde_class, traits["pde"])
    dims = slot(analysis.dimensions, traits["dims"])
    scheme_equiv = {"ftcs": "central"}  # forward-time/centred-space shows as a centred stencil
    scheme = slot(
        analysis.scheme, traits["scheme"],
        lambda e, g: 1.0 if g == e or scheme_equiv.get(e) == g else 0.0,
    )
    expected_bcs = analysis.boundary_conditions - {"unknown"}
    if not expected_bcs:
        bc = 0.5
    else:
        bc = len(expected_bcs & traits["bcs"]) / len(expected_bcs)
    return 0.3 * pde + 0.3 * dims + 0.2 * scheme + 0.2 * bc


def score_static(
    code: str,
    analysis: Optional[FortranAnalysis],
    guardrail_report: Optional[Sequence[Violation]] = None,
    exec_report: Optional[Dict] = None,
    notes: Optional[List[str]] = None,
) -> DimensionScores:
    notes = notes if notes is not None else []
    if guardrail_report is None:
        guardrail_report = [v for v in lint_api(code) if v.severity == "error"]
    return DimensionScores(
        execution=_execution_score(code, exec_report, notes),
        structure=_structure_score(code),
        api=_api_score(guardrail_report),
        parameters=_parameters_score(code, analysis),
        fidelity=_fidelity_score(code, analysis),
    )


# ---------------------------------------------------------------------------
# Blending and grading
# ---------------------------------------------------------------------------

def grade_of(final: float) -> str:
    for letter, threshold in GRADE_THRESHOLDS:
        if final >= threshold:
            return letter
    return "F"


def combine(
    dims: DimensionScores,
    judge: float,
    weights: Optional[Dict[str, float]] = None,
    blend: float = BLEND_LAMBDA,
) -> Tuple[float, float, str]:
    """traditional = sum(w_i * s_i); final = traditional*(1-lambda) +
    judge*lambda; letter grade from the fixed cuts."""
    weights = weights or STATIC_WEIGHTS
    traditional = sum(weights[name] * getattr(dims, name) for name in DIMENSIONS)
    final = traditional * (1.0 - blend) + judge * blend
    return traditional, final, grade_of(final)


# ---------------------------------------------------------------------------
# LLM judge
# ---------------------------------------------------------------------------

_SCORE_RE = re.compile(r"(?<![\d.])(0(?:\.\d+)?|1(?:\.0+)?)(?![\d.])")


def _parse_judge_score(text: str) -> Optional[float]:
    m = _SCORE_RE.search(text)
    if not m:
        return None
    value = float(m.group(1))
    if 0.0 <= value <= 1.0:
        return value
    return None


def judge_llm(fortran: str, devito_code: str, gateway, model: str = "judge") -> float:
    """Independent judge pass at temperature zero; one retry on an
    unparseable response, then JudgeUnparseable."""
    user = (
        JUDGE_RUBRIC
        + "\n\nOriginal Fortran program:\n```fortran\n" + fortran.rstrip("\n")
        + "\n```\n\nConverted Devito code:\n```python\n" + devito_code.rstrip("\n")
        + "\n```"
    )
    request = LlmRequest(system=JUDGE_SYSTEM, user=user, temperature=0.0, model=model)
    for attempt in range(2):
        response = gateway.complete(request)
        score = _parse_judge_score(response)
        if score is not None:
            return score
        log.warning("judge response unparseable (attempt %d)", attempt + 1)
    raise JudgeUnparseable("judge returned no score in [0, 1]")


# ---------------------------------------------------------------------------
# Full evaluation
# ---------------------------------------------------------------------------

def evaluate(
    code: str,
    fortran: str,
    analysis: Optional[FortranAnalysis],
    judge_gateway,
    guardrail_report: Optional[Sequence[Violation]] = None,
    exec_report: Optional[Dict] = None,
    conversion_confidence: Optional[float] = None,
) -> QualityReport:
    start = time.perf_counter()
    notes: List[str] = []
    dims = score_static(code, analysis, guardrail_report, exec_report, notes)
    judge = judge_llm(fortran, code, judge_gateway)
    traditional, final, grade = combine(dims, judge)
    return QualityReport(
        dims=dims,
        traditional=traditional,
        llm_judge=judge,
        final=final,
        grade=grade,
        confidence=conversion_confidence if conversion_confidence is not None else 0.75,
        duration_s=time.perf_counter() - start,
        notes=notes,
    )
