"""
Scripted reproduction: run manifest invocations through the CLI and diff the outputs

Manifest (repro/manifest.csv), one check per row:
    id, invocation, extractor, expected, tolerance, provenance, schema

    extractor   json:<dotted.path>       e.g. json:0.sigma_w, json:cond_ii.passed
                csv:<agg>[a:b]:<expr>    agg = row index | first | last | min | max | absmax | mindiff | maxdiff;
                                         expr is a column or a pandas expression over columns
                exit                     the process exit code
    expected    <op><value> with op in = <= >= < > (bare value means =); the value may be @<check_id>
    tolerance   absolute number, relative percentage like 5%, or - for exact comparison
    provenance  ;-separated claim ids, e.g. PAPER:swish-eoc-values;DERIVED:relu-closed-form
    schema      schemas/<schema>.schema.json name for JSON output, or -
"""

import io
import json
import logging
import math
import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np
import pandas as pd

from ..api import cli
from ..api.writers import validate_json
from ..core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

REPRO_DIR = Path(__file__).resolve().parents[2] / 'repro'
MANIFEST_COLUMNS = ['id', 'invocation', 'extractor', 'expected', 'tolerance', 'provenance', 'schema']
CLAIM_COLUMNS = ['claim', 'source', 'description']

_CSV_EXTRACTOR = re.compile(r'^csv:(?P<agg>[\w-]+)(?:\[(?P<start>-?\d*):(?P<stop>-?\d*)\])?:(?P<expr>.+)$')
_EXPECTED = re.compile(r'^(?P<op><=|>=|=|<|>)?\s*(?P<value>.+)$')

_COMPARATORS: Dict[str, Callable[[float, float, float], bool]] = {
    '=': lambda got, want, tol: abs(got - want) <= tol,
    '<=': lambda got, want, tol: got <= want + tol,
    '>=': lambda got, want, tol: got >= want - tol,
    '<': lambda got, want, tol: got < want,
    '>': lambda got, want, tol: got > want,
}


@dataclass
class Invocation:
    argv: Tuple[str, ...]
    exit_code: int
    stdout: str
    stderr: str


@dataclass
class CheckResult:
    check_id: str
    provenance: Tuple[str, ...]
    passed: bool
    value: Any = None
    expected: str = ''
    tolerance: str = '-'
    detail: str = ''


@dataclass
class ReproReport:
    results: List[CheckResult] = field(default_factory=list)
    coverage: Dict[str, List[str]] = field(default_factory=dict)
    claims: Dict[str, str] = field(default_factory=dict)

    @property
    def uncovered(self) -> List[str]:
        return sorted(c for c, checks in self.coverage.items() if not checks)

    @property
    def failed(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failed and not self.uncovered

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_markdown(self) -> str:
        lines = ['# Reproduction report', '']
        lines.append(f"{len(self.results) - len(self.failed)}/{len(self.results)} checks passed; "
                     f"{len(self.coverage) - len(self.uncovered)}/{len(self.coverage)} claims covered.")
        lines.append('')
        lines.append('| check | result | value | expected | tolerance | provenance | detail |')
        lines.append('|---|---|---|---|---|---|---|')
        for r in self.results:
            lines.append(f"| {r.check_id} | {'PASS' if r.passed else 'FAIL'} | {_cell(r.value)} | "
                         f"{_cell(r.expected)} | {_cell(r.tolerance)} | {'; '.join(r.provenance)} | "
                         f"{_cell(r.detail)} |")
        lines.append('')
        lines.append('## Claim coverage')
        lines.append('')
        lines.append('| claim | description | checks | status |')
        lines.append('|---|---|---|---|')
        status = {r.check_id: r.passed for r in self.results}
        for claim, checks in sorted(self.coverage.items()):
            if not checks:
                verdict = 'UNCOVERED'
            else:
                verdict = 'PASS' if all(status[c] for c in checks) else 'FAIL'
            lines.append(f"| {claim} | {_cell(self.claims.get(claim, ''))} | {', '.join(checks) or '-'} | {verdict} |")
        lines.append('')
        return '\n'.join(lines)


def _cell(value: Any) -> str:
    text = value if isinstance(value, str) else repr(value)
    return text.replace('|', '\\|').replace('\n', ' ')


class ReproRunner:
    """Drives the CLI in-process for every manifest row and compares the extracted values"""

    def __init__(self, runner: Callable = cli.run):
        self.runner = runner
        self._cache: Dict[str, Invocation] = {}

    # ---- manifest -------------------------------------------------------

    def load_manifest(self, path: Path) -> pd.DataFrame:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, comment='#', skipinitialspace=True)
        missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
        if missing:
            raise ConfigurationError(f"manifest {path} lacks columns {missing}", manifest=str(path))
        duplicated = df['id'][df['id'].duplicated()].tolist()
        if duplicated:
            raise ConfigurationError(f"duplicate check ids in manifest: {duplicated}", manifest=str(path))
        return df[MANIFEST_COLUMNS]

    def load_claims(self, path: Path) -> Dict[str, str]:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, comment='#', skipinitialspace=True)
        missing = [c for c in CLAIM_COLUMNS if c not in df.columns]
        if missing:
            raise ConfigurationError(f"claims file {path} lacks columns {missing}", claims=str(path))
        return dict(zip(df['claim'], df['description']))

    # ---- invocations ----------------------------------------------------

    def invoke(self, invocation: str) -> Invocation:
        """Run one CLI command line; identical command lines run once"""
        if invocation not in self._cache:
            argv = tuple(shlex.split(invocation))
            out, err = io.StringIO(), io.StringIO()
            logger.info(f"running: eoc-lab {invocation}")
            code = self.runner(list(argv), stdout=out, stderr=err)
            self._cache[invocation] = Invocation(argv, code, out.getvalue(), err.getvalue())
        return self._cache[invocation]

    # ---- extraction -----------------------------------------------------

    @staticmethod
    def extract(extractor: str, run: Invocation) -> Any:
        if extractor == 'exit':
            return run.exit_code
        if run.exit_code != 0:
            raise ValueError(f"command exited with {run.exit_code}: {run.stderr.strip().splitlines()[-1:]}")
        if extractor.startswith('json:'):
            return _json_path(json.loads(run.stdout), extractor[len('json:'):])
        match = _CSV_EXTRACTOR.match(extractor)
        if match:
            df = pd.read_csv(io.StringIO(run.stdout))
            start = int(match['start']) if match['start'] else None
            stop = int(match['stop']) if match['stop'] else None
            column = df.eval(match['expr'], engine='python') if match['expr'] not in df.columns else df[match['expr']]
            return _aggregate(pd.Series(column).iloc[start:stop], match['agg'])
        raise ValueError(f"unknown extractor {extractor!r}")

    # ---- comparison -----------------------------------------------------

    def compare(self, value: Any, expected: str, tolerance: str,
                resolved: Dict[str, Any]) -> Tuple[bool, str]:
        match = _EXPECTED.match(expected.strip())
        if not match:
            raise ValueError(f"malformed expectation {expected!r}")
        op, raw = match['op'] or '=', match['value'].strip()
        if raw.startswith('@'):
            ref = raw[1:]
            if ref not in resolved:
                raise ValueError(f"reference @{ref} has no value (unknown, later in the manifest, or failed)")
            want = resolved[ref]
        else:
            want = _literal(raw)

        if isinstance(value, bool) or isinstance(want, bool) or isinstance(value, str) or isinstance(want, str):
            if op != '=':
                raise ValueError(f"operator {op} needs numbers, got {value!r} and {want!r}")
            return value == want, f"{value!r} == {want!r}"

        got, want = float(value), float(want)
        if math.isnan(got):
            return False, 'value is nan'
        tol = _tolerance(tolerance, want)
        passed = _COMPARATORS[op](got, want, tol)
        return passed, f"{got:.6g} {op} {want:.6g} (tol {tol:.3g})"

    # ---- driver ---------------------------------------------------------

    def run_check(self, row: Dict[str, str], resolved: Dict[str, Any]) -> CheckResult:
        provenance = tuple(p.strip() for p in row['provenance'].split(';') if p.strip())
        result = CheckResult(row['id'], provenance, False, expected=row['expected'], tolerance=row['tolerance'])
        try:
            run = self.invoke(row['invocation'])
            if run.exit_code == 0 and row['schema'] not in ('', '-'):
                validate_json(json.loads(run.stdout), row['schema'])
            elif run.exit_code in (2, 3) and _last_json(run.stderr):
                validate_json(json.loads(_last_json(run.stderr)), 'error')
            result.value = self.extract(row['extractor'], run)
            result.passed, result.detail = self.compare(result.value, row['expected'], row['tolerance'], resolved)
        except jsonschema.ValidationError as e:
            result.detail = f"schema {row['schema']}: {e.message}"
        except (ValueError, KeyError, IndexError, TypeError) as e:
            result.detail = f"{type(e).__name__}: {e}"
        if result.passed:
            resolved[row['id']] = result.value
        logger.info(f"{row['id']}: {'PASS' if result.passed else 'FAIL'} {result.detail}")
        return result

    def repro_all(self, manifest: Optional[Path] = None, claims: Optional[Path] = None,
                  only: Optional[Sequence[str]] = None) -> ReproReport:
        """Run every check (or the ids in ``only``) sequentially and build the report"""
        manifest = Path(manifest) if manifest else REPRO_DIR / 'manifest.csv'
        claims = Path(claims) if claims else REPRO_DIR / 'claims.csv'
        rows = self.load_manifest(manifest).to_dict('records')
        if only:
            rows = [r for r in rows if r['id'] in set(only)]

        report = ReproReport(claims=self.load_claims(claims))
        report.coverage = {claim: [] for claim in report.claims}
        resolved: Dict[str, Any] = {}
        for row in rows:
            result = self.run_check(row, resolved)
            report.results.append(result)
            for claim in result.provenance:
                report.coverage.setdefault(claim, []).append(result.check_id)
        if only:
            # partial runs only account for the claims they touch
            report.coverage = {c: ids for c, ids in report.coverage.items() if ids}

        logger.info(f"{len(report.results) - len(report.failed)}/{len(report.results)} checks passed, "
                    f"{len(report.uncovered)} claims uncovered")
        return report


def _json_path(document: Any, path: str) -> Any:
    node = document
    for key in path.split('.'):
        if isinstance(node, list):
            node = node[int(key)]
        else:
            node = node[key]
    if isinstance(node, str) and node in ('inf', '-inf', 'nan'):
        return float(node)
    return node


def _last_json(stderr: str) -> str:
    """The JSON diagnostic is the trailing object on stderr, after any log lines"""
    if stderr.startswith('{\n'):
        return stderr
    start = stderr.rfind('\n{\n')
    return stderr[start + 1:] if start >= 0 else ''


def _aggregate(series: pd.Series, agg: str) -> float:
    values = series.to_numpy(dtype=float)
    if values.size == 0:
        raise ValueError("no rows to aggregate")
    if re.fullmatch(r'-?\d+', agg):
        return float(values[int(agg)])
    if agg == 'first':
        return float(values[0])
    if agg == 'last':
        return float(values[-1])
    if agg == 'min':
        return float(np.min(values))
    if agg == 'max':
        return float(np.max(values))
    if agg == 'absmax':
        return float(np.max(np.abs(values)))
    if agg in ('mindiff', 'maxdiff'):
        if values.size < 2:
            raise ValueError(f"{agg} needs at least two rows")
        steps = np.diff(values)
        return float(np.min(steps) if agg == 'mindiff' else np.max(steps))
    raise ValueError(f"unknown aggregate {agg!r}")


def _literal(raw: str) -> Any:
    lowered = raw.lower()
    if lowered in ('true', 'false'):
        return lowered == 'true'
    try:
        return float(raw)
    except ValueError:
        return raw


def _tolerance(raw: str, want: float) -> float:
    raw = (raw or '-').strip()
    if raw == '-':
        return 0.0
    if raw.endswith('%'):
        return abs(want) * float(raw[:-1]) / 100.0
    return float(raw)


# Global reproduction runner instance
repro_runner = ReproRunner()
