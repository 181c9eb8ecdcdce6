"""Rule-based API correctness layer over generated code: denylist and
allowlist linting, equivalent substitutions, preflight structural checks,
pseudo-integration detection, and a formatting hook."""

from __future__ import annotations

import ast
import builtins
import json
import logging
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .errors import FormatterFailed

log = logging.getLogger(__name__)

RULES_VERSION = "devito-4.8"

# top-level names a pinned Devito release exports; the lint allowlist and
# the star-import resolution both read from this surface
DEVITO_API = frozenset({
    "Grid", "Function", "TimeFunction", "SparseFunction", "SparseTimeFunction",
    "PrecomputedSparseFunction", "VectorFunction", "TensorFunction",
    "Eq", "Inc", "solve", "Operator", "Constant", "Dimension",
    "SpaceDimension", "TimeDimension", "ConditionalDimension", "SubDimension",
    "SubDomain", "first_derivative", "second_derivative", "cross_derivative",
    "div", "grad", "curl", "laplace", "norm", "inner", "mmax", "mmin",
    "initialize_function", "switchconfig", "configuration",
})

OPERATOR_KWARGS = frozenset({"subs", "opt", "name", "language", "platform", "compiler"})


@dataclass(frozen=True)
class DenyRule:
    rule_id: str
    pattern: str
    message: str
    suggested_fix: Optional[str] = None  # may use backrefs from the pattern
    severity: str = "error"

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern)


@dataclass
class RuleSet:
    denylist: List[DenyRule]
    allowlist: Set[str]
    substitutions: List[Tuple[str, str]]
    version: str = RULES_VERSION

    @classmethod
    def default(cls) -> "RuleSet":
        return cls(
            denylist=list(_DEFAULT_DENYLIST),
            allowlist=set(DEVITO_API),
            substitutions=list(_DEFAULT_SUBSTITUTIONS),
        )

    @classmethod
    def load(cls, path: str | Path, extend: bool = True) -> "RuleSet":
        """JSON rules file with deny/allow/substitute sections; extends the
        shipped defaults unless extend=False."""
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
        base = cls.default() if extend else cls([], set(), [])
        for entry in spec.get("denylist", []):
            base.denylist.append(
                DenyRule(
                    rule_id=entry.get("rule_id", f"custom_{len(base.denylist)}"),
                    pattern=entry["pattern"],
                    message=entry["message"],
                    suggested_fix=entry.get("suggested_fix"),
                    severity=entry.get("severity", "error"),
                )
            )
        base.allowlist.update(spec.get("allowlist", []))
        base.substitutions.extend(
            (s["pattern"], s["replacement"]) for s in spec.get("substitutions", [])
        )
        base.version = spec.get("version", base.version)
        for rule in base.denylist:
            rule.compiled()  # patterns must compile at load time
        return base


_DEFAULT_DENYLIST = (
    DenyRule(
        rule_id="chained-derivative",
        pattern=r"\b(\w+)\.d([xyz])2?\.backward\b",
        message="chained derivative attributes do not exist in the API",
        suggested_fix=r"first_derivative(\1, dim=\2, side='left')",
    ),
    DenyRule(
        rule_id="chained-derivative-forward",
        pattern=r"\b(\w+)\.d([xyz])2?\.forward\b",
        message="chained derivative attributes do not exist in the API",
        suggested_fix=r"first_derivative(\1, dim=\2, side='right')",
    ),
    DenyRule(
        rule_id="data-initialize",
        pattern=r"\b(\w+)\.data\.initialize\s*\(",
        message="the data view has no initialize(); assign into the array",
        suggested_fix=r"\1.data[:] = 0.0",
    ),
    DenyRule(
        rule_id="operator-bc-kwarg",
        pattern=r"Operator\s*\([^)]*\bbc\s*=",
        message="bc= is not a valid Operator argument; pass boundary equations in the list",
        suggested_fix="Operator([update, *boundary_equations])",
    ),
    DenyRule(
        rule_id="subdomain-condition-string",
        pattern=r"SubDomain\s*\(\s*['\"]",
        message="SubDomain does not take a condition string; subclass it or use boundary equations",
        suggested_fix="Eq(u.forward.subs({x: x.symbolic_min}), 0.0)",
    ),
    DenyRule(
        rule_id="one-based-range",
        pattern=r"range\s*\(\s*1\s*,\s*\w+\s*\+\s*1\s*\)",
        message="1-based loop range; Fortran indexing habit, check bounds",
        severity="warning",
    ),
)

_DEFAULT_SUBSTITUTIONS = (
    (r"\b(\w+)\.d([xyz])\.backward\b", r"first_derivative(\1, dim=\2, side='left')"),
    (r"\b(\w+)\.d([xyz])\.forward\b", r"first_derivative(\1, dim=\2, side='right')"),
    (r"\b(\w+)\.data\.initialize\s*\(\s*\)", r"\1.data[:] = 0.0"),
)


@dataclass(frozen=True)
class Violation:
    rule_id: str
    line: int
    severity: str
    message: str
    suggested_fix: Optional[str] = None


# ---------------------------------------------------------------------------
# API lint
# ---------------------------------------------------------------------------

def lint_api(code: str, rules: Optional[RuleSet] = None) -> List[Violation]:
    """Denylist hits are errors; calls into the DSL surface that match no
    allowlist form are warnings."""
    rules = rules or RuleSet.default()
    violations: List[Violation] = []

    for lineno, line in enumerate(code.split("\n"), start=1):
        for rule in rules.denylist:
            m = rule.compiled().search(line)
            if m:
                fix = m.expand(rule.suggested_fix) if rule.suggested_fix else None
                violations.append(
                    Violation(rule.rule_id, lineno, rule.severity, rule.message, fix)
                )

    try:
        tree = ast.parse(code)
    except SyntaxError:
        return violations

    devito_names: Set[str] = set()
    star_import = False
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom) and node.module == "devito":
            for alias in node.names:
                if alias.name == "*":
                    star_import = True
                else:
                    devito_names.add(alias.asname or alias.name)
                    if alias.name not in rules.allowlist:
                        violations.append(
                            Violation(
                                "unknown-import", node.lineno, "warning",
                                f"'{alias.name}' is not in the approved API surface "
                                f"(rules {rules.version})",
                            )
                        )

    callable_surface = devito_names | (rules.allowlist if star_import else set())
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            name = node.func.id
            if name in callable_surface and name not in rules.allowlist:
                violations.append(
                    Violation(
                        "unknown-call", node.lineno, "warning",
                        f"call to '{name}' matches no approved API form",
                    )
                )
    violations.sort(key=lambda v: (v.line, v.rule_id))
    return violations


# ---------------------------------------------------------------------------
# Preflight structural verification
# ---------------------------------------------------------------------------

_ASSIGNABLE_NODES = (ast.Name, ast.Attribute, ast.Subscript)


def _is_assignable_lhs(node: ast.expr) -> bool:
    if isinstance(node, _ASSIGNABLE_NODES):
        return True
    # substituted boundary access: u.forward.subs({...})
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Attribute):
        return node.func.attr == "subs"
    return False


def _bound_names(tree: ast.AST) -> Set[str]:
    bound: Set[str] = set(dir(builtins))
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and isinstance(node.ctx, (ast.Store, ast.Del)):
            bound.add(node.id)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            bound.add(node.name)
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                args = node.args
                for a in (*args.posonlyargs, *args.args, *args.kwonlyargs):
                    bound.add(a.arg)
                if args.vararg:
                    bound.add(args.vararg.arg)
                if args.kwarg:
                    bound.add(args.kwarg.arg)
        elif isinstance(node, ast.Import):
            for alias in node.names:
                bound.add((alias.asname or alias.name).split(".")[0])
        elif isinstance(node, ast.ImportFrom):
            for alias in node.names:
                if alias.name == "*":
                    if node.module == "devito":
                        bound.update(DEVITO_API)
                else:
                    bound.add(alias.asname or alias.name)
        elif isinstance(node, (ast.Global, ast.Nonlocal)):
            bound.update(node.names)
    return bound


def _grid_dims(tree: ast.AST) -> Optional[int]:
    for node in ast.walk(tree):
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "Grid":
            for kw in node.keywords:
                if kw.arg == "shape" and isinstance(kw.value, (ast.Tuple, ast.List)):
                    return len(kw.value.elts)
    return None


def _time_function_vars(tree: ast.AST) -> Dict[str, int]:
    """name -> extra leading indices on .data (1 for TimeFunction)."""
    out: Dict[str, int] = {}
    for node in ast.walk(tree):
        if isinstance(node, ast.Assign) and isinstance(node.value, ast.Call):
            func = node.value.func
            if isinstance(func, ast.Name) and func.id in ("TimeFunction", "Function"):
                extra = 1 if func.id == "TimeFunction" else 0
                for target in node.targets:
                    if isinstance(target, ast.Name):
                        out[target.id] = extra
    return out


def preflight_structure(code: str) -> List[Violation]:
    """Pre-execution checks: the code parses, Eq left sides are assignable,
    every referenced name is bound somewhere, Operator construction is
    well-formed, data subscripts fit the declared dimensionality, and the
    DSL is not merely decorating plain array loops."""
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        return [
            Violation("syntax-error", exc.lineno or 1, "error",
                      f"code does not parse: {exc.msg}")
        ]

    violations: List[Violation] = []

    for node in ast.walk(tree):
        if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)):
            continue
        if node.func.id == "Eq" and node.args:
            lhs = node.args[0]
            if not _is_assignable_lhs(lhs):
                violations.append(
                    Violation("eq-lhs", node.lineno, "error",
                              "Eq left-hand side is not an assignable quantity")
                )
        if node.func.id == "Operator":
            for kw in node.keywords:
                if kw.arg and kw.arg not in OPERATOR_KWARGS:
                    violations.append(
                        Violation("operator-kwarg", node.lineno, "error",
                                  f"'{kw.arg}=' is not a valid Operator argument")
                    )
            if node.args and isinstance(node.args[0], ast.Call):
                violations.append(
                    Violation("operator-list", node.lineno, "warning",
                              "Operator should receive a list of equations")
                )

    bound = _bound_names(tree)
    reported: Set[str] = set()
    for node in ast.walk(tree):
        if (isinstance(node, ast.Name) and isinstance(node.ctx, ast.Load)
                and node.id not in bound and node.id not in reported):
            reported.add(node.id)
            violations.append(
                Violation("undefined-name", node.lineno, "error",
                          f"undefined name '{node.id}'")
            )

    grid_dims = _grid_dims(tree)
    if grid_dims is not None:
        fn_vars = _time_function_vars(tree)
        for node in ast.walk(tree):
            if not (isinstance(node, ast.Subscript) and isinstance(node.value, ast.Attribute)):
                continue
            attr = node.value
            if attr.attr != "data" or not isinstance(attr.value, ast.Name):
                continue
            var = attr.value.id
            if var not in fn_vars:
                continue
            index = node.slice
            rank = len(index.elts) if isinstance(index, ast.Tuple) else 1
            max_rank = grid_dims + fn_vars[var]
            if rank > max_rank:
                violations.append(
                    Violation("data-rank", node.lineno, "error",
                              f"'{var}.data' indexed with {rank} subscripts but holds "
                              f"{max_rank} dimensions")
                )

    violations.extend(_pseudo_integration(tree, code))
    violations.sort(key=lambda v: (v.line, v.rule_id))
    return violations


def _pseudo_integration(tree: ast.AST, code: str) -> List[Violation]:
    """DSL import present + loops mutating plain array slices + no Operator
    application means the package only decorates a hand-written solver."""
    imports_dsl = any(
        (isinstance(node, ast.ImportFrom) and node.module == "devito")
        or (isinstance(node, ast.Import) and any(a.name == "devito" for a in node.names))
        for node in ast.walk(tree)
    )
    if not imports_dsl:
        return []

    has_operator = any(
        isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
        and node.func.id == "Operator"
        for node in ast.walk(tree)
    )
    has_apply = any(
        isinstance(node, ast.Call) and isinstance(node.func, ast.Attribute)
        and node.func.attr == "apply"
        for node in ast.walk(tree)
    )

    loop_writes = []
    for node in ast.walk(tree):
        if isinstance(node, ast.For):
            for inner in ast.walk(node):
                if isinstance(inner, ast.Assign) and any(
                    isinstance(t, ast.Subscript) and isinstance(t.value, ast.Name)
                    for t in inner.targets
                ):
                    loop_writes.append(inner.lineno)
                    break

    if loop_writes and not (has_operator and has_apply):
        return [
            Violation("pseudo-integration", loop_writes[0], "error",
                      "DSL imported but the time loop updates plain arrays; "
                      "no Operator is ever applied")
        ]
    return []


# ---------------------------------------------------------------------------
# Substitutions
# ---------------------------------------------------------------------------

def apply_substitutions(code: str, rules: Optional[RuleSet] = None) -> str:
    """Rewrite every substitution pattern to its equivalent supported form.
    Applying twice equals applying once."""
    rules = rules or RuleSet.default()
    for pattern, replacement in rules.substitutions:
        code = re.sub(pattern, replacement, code)
    return code


# ---------------------------------------------------------------------------
# Formatting hook
# ---------------------------------------------------------------------------

def _sort_import_block(lines: List[str]) -> List[str]:
    """Sort the contiguous leading import block: plain imports first, then
    from-imports, each alphabetical."""
    start = 0
    while start < len(lines) and (
        not lines[start].strip() or lines[start].lstrip().startswith("#")
    ):
        start += 1
    end = start
    while end < len(lines) and re.match(r"^(import|from)\s", lines[end].strip() or "import"):
        if not lines[end].strip():
            break
        if not re.match(r"^(import|from)\s", lines[end].strip()):
            break
        end += 1
    block = lines[start:end]
    if not block:
        return lines
    plain = sorted(l for l in block if l.strip().startswith("import "))
    froms = sorted(l for l in block if l.strip().startswith("from "))
    return lines[:start] + plain + froms + lines[end:]


def format_code(code: str, formatter_path: Optional[str] = None) -> str:
    """Run the configured external formatter if any; otherwise apply the
    built-in normalization (import sorting, trailing whitespace strip,
    blank-line collapse). The result parses to the same tree modulo import
    order; unparseable input comes back unchanged with a warning."""
    try:
        ast.parse(code)
    except SyntaxError:
        log.warning("format_code: input does not parse; returning unchanged")
        return code

    if formatter_path:
        try:
            with tempfile.NamedTemporaryFile("w", suffix=".py", delete=False) as tmp:
                tmp.write(code)
                tmp_path = tmp.name
            proc = subprocess.run(
                [formatter_path, tmp_path], capture_output=True, text=True, timeout=60
            )
            if proc.returncode != 0:
                raise FormatterFailed(proc.stderr.strip() or "formatter exited nonzero")
            formatted = Path(tmp_path).read_text(encoding="utf-8")
            ast.parse(formatted)
            return formatted
        except FormatterFailed as exc:
            log.warning("external formatter failed (%s); using built-in normalization", exc)
        except (OSError, subprocess.TimeoutExpired, SyntaxError) as exc:
            log.warning("external formatter unusable (%s); using built-in normalization", exc)

    lines = [l.rstrip() for l in code.split("\n")]
    lines = _sort_import_block(lines)
    collapsed: List[str] = []
    for line in lines:
        if not line and collapsed and not collapsed[-1]:
            continue
        collapsed.append(line)
    while collapsed and not collapsed[-1]:
        collapsed.pop()
    result = "\n".join(collapsed) + "\n"
    ast.parse(result)  # normalization must keep the code parseable
    return result
