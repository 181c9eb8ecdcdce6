"""Static analysis of Fortran finite-difference sources into a feature
vector, and the three-tier retrieval query set derived from it.

Pattern-based (lexical plus shallow structure), not a full Fortran grammar:
continuations and comments are normalized first so fixed-form and free-form
sources both scan the same way.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .errors import EmptySource

log = logging.getLogger(__name__)

PDE_CLASSES = ("parabolic", "hyperbolic", "elliptic", "unknown")
SCHEMES = ("central", "upwind", "crank_nicolson", "jacobi", "ftcs", "unknown")
TIME_STEPPING = ("explicit", "implicit", "none")
BC_KINDS = ("dirichlet", "neumann", "periodic", "absorbing", "unknown")

TIER_STRATEGY = {"primary": "comprehensive", "secondary": "fast", "concept": "deep"}

EXPECTED_SIGNATURES = 6  # declarations, loops, offsets, update form, pde, bcs

_FORTRAN_KEYWORDS = re.compile(
    r"\b(program|subroutine|function|implicit|integer|real|dimension|do|enddo|end)\b"
)
_DECL_DIM_RE = re.compile(
    r"^\s*(?:real|integer|double\s+precision|complex)[^:!\n]*"
    r"dimension\s*\(([^)]*)\)\s*(?:::)?\s*([a-z_]\w*(?:\s*,\s*[a-z_]\w*)*)"
)
_DECL_INLINE_RE = re.compile(
    r"^\s*(?:real|integer|double\s+precision|complex)\b[^!\n]*?::\s*(.+)$"
)
_PARAM_RE = re.compile(r"\b([a-z_]\w*)\s*=\s*([0-9][0-9_.edED+-]*)")
_DO_RE = re.compile(r"^\s*(?:\d+\s+)?do\b")
_END_DO_RE = re.compile(r"^\s*(?:\d+\s+)?end\s*do\b")
_ARRAY_REF_RE = re.compile(r"\b([a-z_]\w*)\s*\(([^()]*)\)")
_OFFSET_RE = re.compile(r"\b[a-z_]\w*\s*([+-])\s*(\d+)\b")
_ASSIGN_RE = re.compile(r"^\s*([a-z_]\w*)\s*\(([^()]*)\)\s*=\s*(.+)$")
_CONV_TEST_RE = re.compile(r"\b(err\w*|tol\w*|eps\w*|resid\w*|diff\w*)\b\s*(?:[<>]|\.lt\.|\.gt\.|\.le\.|\.ge\.)")
_WHILE_RE = re.compile(r"\bdo\s+while\b")
_NUMBER_RE = re.compile(r"^[0-9]")

_INTRINSICS = {
    "abs", "max", "min", "maxval", "minval", "sum", "sqrt", "exp", "sin",
    "cos", "tan", "mod", "real", "int", "nint", "size", "float", "dble",
}


@dataclass
class FortranAnalysis:
    dimensions: int = 1
    pde_class: str = "unknown"
    scheme: str = "unknown"
    time_stepping: str = "none"
    boundary_conditions: Set[str] = field(default_factory=set)
    stencil_radius: int = 0
    confidence: float = 0.0
    complexity: float = 0.0
    detected_arrays: List[Tuple[str, int]] = field(default_factory=list)
    detected_loops: int = 0
    parameters: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "dimensions": self.dimensions,
            "pde_class": self.pde_class,
            "scheme": self.scheme,
            "time_stepping": self.time_stepping,
            "boundary_conditions": sorted(self.boundary_conditions),
            "stencil_radius": self.stencil_radius,
            "confidence": self.confidence,
            "complexity": self.complexity,
            "detected_arrays": [list(a) for a in self.detected_arrays],
            "detected_loops": self.detected_loops,
            "parameters": self.parameters,
        }


@dataclass(frozen=True)
class QuerySpec:
    tier: str
    strategy: str
    text: str
    keywords: frozenset

    @classmethod
    def make(cls, tier: str, text: str, keywords: Sequence[str]) -> "QuerySpec":
        return cls(tier=tier, strategy=TIER_STRATEGY[tier], text=text,
                   keywords=frozenset(keywords))


# ---------------------------------------------------------------------------
# Source normalization
# ---------------------------------------------------------------------------

def _looks_fixed_form(source: str) -> bool:
    """Heuristic form detection: classic column-1 comments or numeric
    statement labels mark fixed form; '::' declarations mark free form."""
    has_fixed_markers = False
    for line in source.split("\n"):
        if "::" in line or line.rstrip().endswith("&"):
            return False
        if re.match(r"^[cC*]($|\s)", line) or re.match(r"^ {0,4}\d+\s+\S", line):
            has_fixed_markers = True
    return has_fixed_markers


def normalize_source(source: str) -> List[str]:
    """Lowercase logical lines with comments stripped and continuations
    joined (free-form '&' markers, or column-6 markers in fixed form)."""
    fixed_form = _looks_fixed_form(source)
    raw_lines = source.split("\n")
    cleaned: List[str] = []
    for line in raw_lines:
        if fixed_form and re.match(r"^[cC*]($|\s)", line):
            cleaned.append("")
            continue
        out = []
        in_str: Optional[str] = None
        for ch in line:
            if in_str:
                out.append(ch)
                if ch == in_str:
                    in_str = None
            elif ch in ("'", '"'):
                in_str = ch
                out.append(ch)
            elif ch == "!":
                break
            else:
                out.append(ch)
        cleaned.append("".join(out).rstrip())

    logical: List[str] = []
    for line in cleaned:
        stripped = line.strip()
        is_fixed_cont = (
            fixed_form
            and len(line) >= 6
            and line[:5].strip() == ""
            and line[5] not in (" ", "0")
            and bool(stripped)
        )
        if logical and (logical[-1].endswith("&") or is_fixed_cont):
            prev = logical[-1].rstrip("&").rstrip()
            cont = line[6:].strip() if is_fixed_cont else stripped.lstrip("&").lstrip()
            logical[-1] = prev + " " + cont
        else:
            logical.append(line.rstrip())
    return [l.lower() for l in logical]


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def _declared_arrays(lines: Sequence[str]) -> List[Tuple[str, int]]:
    arrays: List[Tuple[str, int]] = []
    seen: Set[str] = set()

    def add(name: str, rank: int) -> None:
        if name not in seen:
            seen.add(name)
            arrays.append((name, rank))

    for line in lines:
        m = _DECL_DIM_RE.match(line)
        if m:
            rank = m.group(1).count(",") + 1
            for name in (n.strip() for n in m.group(2).split(",")):
                if name:
                    add(name, rank)
            continue
        m = _DECL_INLINE_RE.match(line)
        if m and "parameter" not in line:
            for part in re.finditer(r"([a-z_]\w*)\s*\(([^()]*)\)", m.group(1)):
                add(part.group(1), part.group(2).count(",") + 1)
    return arrays


def _numeric_parameters(lines: Sequence[str]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for line in lines:
        if "=" not in line:
            continue
        scope = line
        if "::" in line:
            scope = line.split("::", 1)[1]
        elif not re.match(r"^\s*[a-z_]\w*\s*=", line):
            continue
        for m in _PARAM_RE.finditer(scope):
            name, raw = m.group(1), m.group(2).rstrip(".")
            try:
                params[name] = float(raw.replace("d", "e").replace("D", "e"))
            except ValueError:
                continue
    return params


def _loop_stats(lines: Sequence[str]) -> Tuple[int, int]:
    count = depth = max_depth = 0
    for line in lines:
        if _DO_RE.match(line) and not _END_DO_RE.match(line):
            count += 1
            depth += 1
            max_depth = max(max_depth, depth)
        elif _END_DO_RE.match(line):
            depth = max(0, depth - 1)
    return count, max_depth


def _offsets_in(expr: str, array_names: Set[str]) -> List[int]:
    offsets: List[int] = []
    for m in _ARRAY_REF_RE.finditer(expr):
        if m.group(1) in _INTRINSICS or (array_names and m.group(1) not in array_names):
            continue
        for om in _OFFSET_RE.finditer(m.group(2)):
            offsets.append(int(om.group(1) + om.group(2)))
    return offsets


@dataclass
class _Update:
    lhs: str
    lhs_indices: str
    rhs: str
    offsets: List[int]
    rhs_arrays: Set[str]


def _updates(lines: Sequence[str], array_names: Set[str]) -> List[_Update]:
    updates: List[_Update] = []
    for line in lines:
        m = _ASSIGN_RE.match(line)
        if not m:
            continue
        lhs, idx, rhs = m.group(1), m.group(2), m.group(3)
        if array_names and lhs not in array_names:
            continue
        offsets = _offsets_in(rhs, array_names)
        rhs_arrays = {
            am.group(1)
            for am in _ARRAY_REF_RE.finditer(rhs)
            if am.group(1) in array_names
        }
        if offsets:
            updates.append(_Update(lhs, idx, rhs, offsets, rhs_arrays))
    return updates


def _boundary_conditions(
    lines: Sequence[str], array_names: Set[str], extents: Set[str]
) -> Set[str]:
    found: Set[str] = set()
    edge_tokens = {"1"} | extents
    for line in lines:
        m = _ASSIGN_RE.match(line)
        if not m or (array_names and m.group(1) not in array_names):
            continue
        indices = [t.strip() for t in m.group(2).split(",")]
        at_edge = any(tok in edge_tokens for tok in indices)
        if not at_edge:
            continue
        rhs = m.group(3).strip()
        rhs_refs = list(_ARRAY_REF_RE.finditer(rhs))
        if re.fullmatch(r"[-+]?\d*\.?\d+(?:[ed][-+]?\d+)?", rhs):
            found.add("dirichlet")
        elif any(
            r.group(1) == m.group(1)
            and any(tok in edge_tokens for tok in (t.strip() for t in r.group(2).split(",")))
            and r.group(2).strip() != m.group(2).strip()
            for r in rhs_refs
        ):
            found.add("periodic")
        elif any(r.group(1) == m.group(1) for r in rhs_refs):
            found.add("neumann")
        elif re.search(r"\b(damp|sponge|absorb)\w*\b", rhs):
            found.add("absorbing")
        elif re.fullmatch(r"[a-z_]\w*", rhs) and rhs not in array_names:
            found.add("dirichlet")  # constant-by-name edge value
    for line in lines:
        if re.search(r"\b(damp|sponge|absorb)\w*\b", line):
            found.add("absorbing")
            break
    return found


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def analyze(source: str) -> FortranAnalysis:
    """Pattern-scan a Fortran source into its finite-difference feature
    vector. Deterministic and side-effect free."""
    if not source.strip():
        raise EmptySource("empty Fortran source")

    lines = normalize_source(source)
    body = "\n".join(lines)
    analysis = FortranAnalysis()

    if not _FORTRAN_KEYWORDS.search(body):
        log.warning("no Fortran keywords found; returning unknowns")
        return analysis

    arrays = _declared_arrays(lines)
    analysis.detected_arrays = arrays
    array_names = {name for name, _ in arrays}
    rank_of = dict(arrays)
    extents: Set[str] = set()
    for line in lines:
        m = _DECL_DIM_RE.match(line)
        if m:
            extents.update(t.strip() for t in m.group(1).split(",") if t.strip())
        m2 = _DECL_INLINE_RE.match(line)
        if m2 and "parameter" not in line:
            for part in re.finditer(r"[a-z_]\w*\s*\(([^()]*)\)", m2.group(1)):
                extents.update(t.strip() for t in part.group(1).split(",") if t.strip())
    extents = {e for e in extents if re.fullmatch(r"[a-z_]\w*", e)}

    analysis.parameters = {
        k: v for k, v in _numeric_parameters(lines).items() if k not in array_names
    }
    n_loops, depth = _loop_stats(lines)
    analysis.detected_loops = n_loops

    updates = _updates(lines, array_names)

    def is_boundary_assign(u: _Update) -> bool:
        for token in (t.strip() for t in u.lhs_indices.split(",")):
            if token == "1" or token in extents:
                return True
            if re.fullmatch(r"([a-z_]\w*)\s*[-+]\s*\d+", token):
                base = re.match(r"[a-z_]\w*", token).group(0)
                if base in extents:
                    return True
        return False

    stencil_updates = [u for u in updates if u.offsets and not is_boundary_assign(u)]
    if stencil_updates:
        analysis.stencil_radius = max(abs(o) for u in stencil_updates for o in u.offsets)
        ranks = [rank_of.get(u.lhs, 1) for u in stencil_updates]
        analysis.dimensions = max(1, min(3, max(ranks)))
    elif arrays:
        analysis.dimensions = max(1, min(3, max(r for _, r in arrays)))

    analysis.boundary_conditions = _boundary_conditions(lines, array_names, extents)

    convergence = bool(_WHILE_RE.search(body) and _CONV_TEST_RE.search(body)) or bool(
        _CONV_TEST_RE.search(body)
    )
    has_offsets = bool(stencil_updates)
    positive = any(o > 0 for u in stencil_updates for o in u.offsets)
    negative = any(o < 0 for u in stencil_updates for o in u.offsets)
    new_on_rhs = any(
        u.lhs in u.rhs_arrays and _offsets_in(u.rhs, {u.lhs}) for u in stencil_updates
    )
    # second-order time: the update reads two earlier time levels (a second
    # old-level array, or an explicit old/previous-named buffer)
    second_time = any(
        len(u.rhs_arrays - {u.lhs}) >= 2
        or re.search(r"\b\w*(?:old|prev|m1)\w*\s*\(", u.rhs)
        for u in stencil_updates
    )

    if has_offsets:
        if convergence:
            analysis.pde_class = "elliptic"
            analysis.scheme = "jacobi"
            analysis.time_stepping = "none"
        elif new_on_rhs:
            analysis.pde_class = "parabolic"
            analysis.scheme = "crank_nicolson"
            analysis.time_stepping = "implicit"
        elif second_time and positive and negative:
            analysis.pde_class = "hyperbolic"
            analysis.scheme = "central"
            analysis.time_stepping = "explicit"
        elif positive != negative:  # one-sided offsets only
            analysis.pde_class = "hyperbolic"
            analysis.scheme = "upwind"
            analysis.time_stepping = "explicit"
        elif positive and negative:
            analysis.pde_class = "parabolic"
            analysis.scheme = "ftcs"
            analysis.time_stepping = "explicit"

    matched = sum(
        (
            bool(arrays),
            n_loops > 0,
            has_offsets,
            bool(stencil_updates) and analysis.time_stepping in ("explicit", "implicit", "none"),
            analysis.pde_class != "unknown",
            bool(analysis.boundary_conditions - {"unknown"}),
        )
    )
    analysis.confidence = matched / EXPECTED_SIGNATURES

    n_lines = len([l for l in lines if l.strip()])
    raw = (depth / 3 + len(arrays) / 10 + n_lines / 500) / 3
    analysis.complexity = max(0.0, min(1.0, raw))
    return analysis


# ---------------------------------------------------------------------------
# Query generation
# ---------------------------------------------------------------------------

_PDE_NAMES = {"parabolic": "heat", "elliptic": "laplace"}
_SCHEME_NAMES = {
    "central": "central difference",
    "upwind": "upwind",
    "crank_nicolson": "Crank-Nicolson",
    "jacobi": "Jacobi iteration",
    "ftcs": "FTCS explicit",
}


def _pde_display(a: FortranAnalysis) -> Optional[str]:
    if a.pde_class == "hyperbolic":
        return "advection" if a.scheme == "upwind" else "wave"
    return _PDE_NAMES.get(a.pde_class)


def generate_queries(a: FortranAnalysis) -> List[QuerySpec]:
    """Emit the three-tier query set with its fixed strategy binding:
    primary 1-2, secondary 1-3, concept 1-2."""
    keywords: Set[str] = {f"{a.dimensions}d"}
    if a.pde_class != "unknown":
        keywords.add(a.pde_class)
    name = _pde_display(a)
    if name:
        keywords.add(name)
    if a.scheme != "unknown":
        keywords.add(a.scheme.replace("_", " "))
    if a.time_stepping != "none":
        keywords.add(a.time_stepping)
    keywords.update(bc for bc in a.boundary_conditions if bc != "unknown")
    kw = sorted(keywords)

    queries: List[QuerySpec] = []
    if name:
        queries.append(
            QuerySpec.make(
                "primary",
                f"{a.dimensions}D {name} equation finite difference Devito implementation",
                kw,
            )
        )
        if a.scheme != "unknown":
            queries.append(
                QuerySpec.make(
                    "primary",
                    f"{_SCHEME_NAMES[a.scheme]} scheme {name} equation Devito example",
                    kw,
                )
            )
    else:
        queries.append(
            QuerySpec.make("primary", "finite difference Devito implementation", kw)
        )

    secondary = ["grid initialization patterns"]
    if a.boundary_conditions - {"unknown"}:
        secondary.insert(0, "boundary condition implementation")
    if a.time_stepping in ("explicit", "implicit"):
        secondary.append(f"{a.time_stepping} time stepping implementation")
    for text in secondary[:3]:
        queries.append(QuerySpec.make("secondary", text, kw))

    queries.append(QuerySpec.make("concept", "mathematical equivalence verification", kw))
    if a.scheme == "upwind":
        queries.append(QuerySpec.make("concept", "CFL condition upwind scheme stability", kw))
    elif a.scheme != "unknown":
        queries.append(
            QuerySpec.make(
                "concept", f"von Neumann stability analysis {_SCHEME_NAMES[a.scheme]} scheme", kw
            )
        )
    return queries
