"""
Study configuration files.

INI layout with three sections::

    [problem]
    n_side = 16
    alpha = 0.1
    beta = 0.01
    a = -2
    b = 2
    yd = 10*sin(pi*x)*sin(pi*y)
    yr = 0
    c0 = 0

    [solver]
    kkt_tol = 1e-6
    max_iter = 20000
    schur_method = direct

    [study]
    meshes = 8, 16, 32, 64
    epsilon = 0.004
    z0_lambda = 0
    z0_p = 0
    z0_mu = 0
    reference_n_side = 64

Required keys: ``alpha``, ``beta``, ``a``, ``b``, ``yd``.  Everything else has
the defaults of the standard problem.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..abcd_solver import ProblemSpec
from ..grid_fem import assemble_operators, build_unit_square_mesh, nodal_sample
from ..prox_kit import BoxBounds
from .expressions import ExpressionError, parse_expression

STANDARD_CONFIG = """\
[problem]
n_side = 16
alpha = 0.1
beta = 0.01
a = -2
b = 2
yd = 10*sin(pi*x)*sin(pi*y)
yr = 0
c0 = 0

[solver]
kkt_tol = 1e-6
max_iter = 20000

[study]
meshes = 8, 16, 32, 64
"""

REQUIRED = {"problem": ("alpha", "beta", "a", "b", "yd")}


class ConfigError(ValueError):
    """Invalid configuration; the message names the section, key and line."""


@dataclass(frozen=True)
class ProblemTemplate:
    """Mesh-free problem description; instantiate per mesh with :meth:`build`."""

    alpha: float = 0.1
    beta: float = 0.01
    a: float = -2.0
    b: float = 2.0
    yd: str = "10*sin(pi*x)*sin(pi*y)"
    yr: str = "0"
    c0: str = "0"

    def build(self, n_side: int) -> ProblemSpec:
        mesh = build_unit_square_mesh(n_side)
        c0 = parse_expression(self.c0)
        ops = assemble_operators(mesh, c0=c0)
        return ProblemSpec(
            alpha=self.alpha, beta=self.beta, bounds=BoxBounds(self.a, self.b),
            yd=nodal_sample(mesh, parse_expression(self.yd)),
            yr=nodal_sample(mesh, parse_expression(self.yr)),
            ops=ops, mesh=mesh,
        )


@dataclass(frozen=True)
class StudyConfig:
    problem: ProblemTemplate = field(default_factory=ProblemTemplate)
    n_side: int = 16
    kkt_tol: float = 1e-6
    max_iter: int = 20000
    schur_method: str = "direct"
    meshes: tuple = (8, 16, 32, 64)
    epsilon: Optional[float] = None
    z0: tuple = ("0", "0", "0")
    reference_n_side: Optional[int] = None
    out_dir: Path = Path(".")

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ConfigError("[solver] kkt_tol: must be positive")
        if self.max_iter < 1:
            raise ConfigError("[solver] max_iter: must be at least 1")
        if any(b <= a for a, b in zip(self.meshes, self.meshes[1:])):
            raise ConfigError("[study] meshes: must be strictly increasing")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("[study] epsilon: must be positive")

    @property
    def eps(self) -> float:
        """Primal accuracy for ``k_h(eps)``; defaults to ``1e-3 (b - a)``."""
        if self.epsilon is not None:
            return self.epsilon
        return 1e-3 * (self.problem.b - self.problem.a)

    def z0_fields(self):
        return tuple(parse_expression(e) for e in self.z0)

    def with_overrides(self, **kw) -> "StudyConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def _line_of(text: str, section: str, key: str) -> Optional[int]:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return lineno
    return None


def _where(text: str, section: str, key: str) -> str:
    line = _line_of(text, section, key)
    return f"[{section}] {key}" + (f" (line {line})" if line else "")


def parse_config(source: Union[str, Path], out_dir: Union[str, Path] = ".") -> StudyConfig:
    """
    Parse an INI document into a :class:`StudyConfig`.

    ``source`` is the document text, or a :class:`~pathlib.Path` to read.

    Raises
    ------
    ConfigError
        For missing required keys, malformed values, unknown sections and
        invalid expressions.  Messages name the offending key.
    """
    if isinstance(source, Path):
        path = source
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    else:
        text = str(source)

    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    unknown = set(cp.sections()) - {"problem", "solver", "study"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for section, keys in REQUIRED.items():
        for key in keys:
            if not cp.has_option(section, key):
                raise ConfigError(f"[{section}] {key}: required field is missing")

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, ExpressionError) as exc:
            raise ConfigError(f"{_where(text, section, key)}: invalid value {raw!r} ({exc})") from None

    def expr(raw: str) -> str:
        parse_expression(raw)
        return raw

    def int_list(raw: str) -> tuple:
        return tuple(int(v) for v in re.split(r"[,\s]+", raw.strip("[]() ")) if v)

    def positive(conv):
        def inner(raw):
            v = conv(raw)
            if not v > 0:
                raise ValueError("must be positive")
            return v
        return inner

    defaults = ProblemTemplate()
    problem = ProblemTemplate(
        alpha=get("problem", "alpha", positive(float), defaults.alpha),
        beta=get("problem", "beta", positive(float), defaults.beta),
        a=get("problem", "a", float, defaults.a),
        b=get("problem", "b", float, defaults.b),
        yd=get("problem", "yd", expr, defaults.yd),
        yr=get("problem", "yr", expr, defaults.yr),
        c0=get("problem", "c0", expr, defaults.c0),
    )
    if not (np.isfinite(problem.a) and np.isfinite(problem.b)) or not problem.a <= 0.0 <= problem.b:
        raise ConfigError(f"{_where(text, 'problem', 'a')}: bounds need a <= 0 <= b")

    n_side = get("problem", "n_side", int, 16)
    if n_side < 2:
        raise ConfigError(f"{_where(text, 'problem', 'n_side')}: must be at least 2")
    method = get("solver", "schur_method", str, "direct")
    if method not in ("direct", "cg"):
        raise ConfigError(f"{_where(text, 'solver', 'schur_method')}: expected 'direct' or 'cg'")
    meshes = get("study", "meshes", int_list, (8, 16, 32, 64))
    if any(m < 2 for m in meshes) or any(b <= a for a, b in zip(meshes, meshes[1:])):
        raise ConfigError(f"{_where(text, 'study', 'meshes')}: need strictly increasing n_side >= 2")

    return StudyConfig(
        problem=problem,
        n_side=n_side,
        kkt_tol=get("solver", "kkt_tol", positive(float), 1e-6),
        max_iter=get("solver", "max_iter", positive(int), 20000),
        schur_method=method,
        meshes=meshes,
        epsilon=get("study", "epsilon", positive(float), None),
        z0=(get("study", "z0_lambda", expr, "0"), get("study", "z0_p", expr, "0"),
            get("study", "z0_mu", expr, "0")),
        reference_n_side=get("study", "reference_n_side", int, None),
        out_dir=Path(out_dir),
    )


def standard_config(out_dir: Union[str, Path] = ".") -> StudyConfig:
    return parse_config(STANDARD_CONFIG, out_dir=out_dir)
