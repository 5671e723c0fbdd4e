"""Loading TOML system files.

Layout::

    [system]
    name = "holt"
    coords = ["x", "y", "px", "py"]
    params = { k2 = 1.0, k3 = 0.0 }
    dynamics = "X1"              # name of the dynamical field, or an expression list
    x0 = [0.0, 1.0, 0.3, 0.2]

    [fields]                     # ordered; each entry lists n component expressions
    X1 = ["px", "py", "...", "..."]

    [domain]
    positive = ["y"]             # expressions required to be strictly positive
    box = [[-1, 1], [0.5, 2], [-1, 1], [-1, 1]]
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .expr import ExprError, parse
from .fields import Domain, Frame, VectorField

FIXTURE_DIR = Path(__file__).parent / "fixtures"


class SystemFileError(ValueError):
    """Invalid system file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}" if path else "<system>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class SystemFile:
    name: str
    domain: Domain
    frame: Frame
    gamma: VectorField
    gamma_index: int | None
    x0: np.ndarray
    source: str | None = None

    @property
    def n(self) -> int:
        return self.domain.n


def fixture_path(name: str) -> Path:
    p = FIXTURE_DIR / name
    if not p.suffix:
        p = p.with_suffix(".toml")
    return p


def load_system(path, params_override: dict | None = None) -> SystemFile:
    path = Path(path)
    if not path.exists() and fixture_path(str(path)).exists():
        path = fixture_path(str(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise SystemFileError(f"cannot read file: {exc.strerror}", path) from None
    return loads_system(text, source=str(path), params_override=params_override)


def _line_of(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def loads_system(text: str, source: str | None = None, params_override: dict | None = None) -> SystemFile:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise SystemFileError(f"TOML syntax error: {exc}", source, int(m.group(1)) if m else None) from None

    def fail(msg, needle=None):
        raise SystemFileError(msg, source, _line_of(text, needle) if needle else None)

    for section in ("system", "fields", "domain"):
        if section not in doc:
            fail(f"missing [{section}] section")
    sysd, fieldsd, domd = doc["system"], doc["fields"], doc["domain"]

    coords = sysd.get("coords")
    if not isinstance(coords, list) or not coords or not all(isinstance(c, str) for c in coords):
        fail("system.coords must be a non-empty list of names", "coords")
    n = len(coords)
    params = {k: float(v) for k, v in sysd.get("params", {}).items()}
    if params_override:
        params.update({k: float(v) for k, v in params_override.items()})
    pnames = list(params)

    def parse_at(s, needle):
        if not isinstance(s, str):
            fail(f"expected an expression string, got {s!r}", needle)
        try:
            return parse(s, coords, pnames)
        except ExprError as exc:
            fail(f"in expression {s!r}: {exc}", s if _line_of(text, s) else needle)

    constraints = tuple(parse_at(s, "positive") for s in domd.get("positive", []))
    box = domd.get("box")
    if box is None:
        fail("domain.box is required")
    if isinstance(box, dict):
        missing = [c for c in coords if c not in box]
        if missing:
            fail(f"domain.box has no interval for {missing}", "box")
        box = [box[c] for c in coords]
    try:
        box = np.array(box, dtype=float)
        domain = Domain(tuple(coords), params, constraints, box)
    except (ValueError, TypeError) as exc:
        fail(f"invalid box: {exc}", "box")

    fields = []
    for name, comps in fieldsd.items():
        if not isinstance(comps, list) or len(comps) != n:
            fail(f"field {name} must list {n} component expressions", name)
        fields.append(VectorField(tuple(parse_at(c, name) for c in comps), domain, name))
    if not fields:
        fail("no fields defined", "[fields]")
    frame = Frame(tuple(fields), domain)

    dyn = sysd.get("dynamics", fields[0].name)
    if isinstance(dyn, str):
        names = [X.name for X in fields]
        if dyn not in names:
            fail(f"dynamics {dyn!r} is not a field name", "dynamics")
        gi = names.index(dyn)
        gamma = fields[gi]
    else:
        if len(dyn) != n:
            fail(f"dynamics must list {n} expressions", "dynamics")
        gi = None
        gamma = VectorField(tuple(parse_at(c, "dynamics") for c in dyn), domain, "Gamma")

    x0 = sysd.get("x0")
    if x0 is None:
        x0 = box.mean(axis=1)
    x0 = np.array(x0, dtype=float)
    if x0.shape != (n,):
        fail(f"x0 must have {n} entries", "x0")
    if not domain.admissible(x0[None, :])[0]:
        fail(f"x0={x0.tolist()} is not admissible", "x0")
    return SystemFile(sysd.get("name", source or "system"), domain, frame, gamma, gi, x0, source)


def with_dynamics(system: SystemFile, index: int) -> SystemFile:
    """Same system with basis field ``index`` as the dynamical field."""
    return SystemFile(system.name, system.domain, system.frame, system.frame[index], index, system.x0, system.source)
