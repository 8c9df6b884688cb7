import io
import json
import math

import pytest

from backend.api import cli
from backend.core.activations import make_activation
from backend.core.models import MeanFieldParams, QuadratureConfig
from backend.services.meanfield_service import MeanFieldEngine
from backend.services.quadrature_service import GaussianQuadrature

RELU_EOC = MeanFieldParams(sigma_b2=0.0, sigma_w2=2.0)
TANH_ORDERED = MeanFieldParams(sigma_b2=1.0, sigma_w2=1.0)
SQRT2 = math.sqrt(2.0)


@pytest.fixture(scope='session')
def quad():
    return GaussianQuadrature(QuadratureConfig())


@pytest.fixture(scope='session')
def engine(quad):
    return MeanFieldEngine(quad)


@pytest.fixture(scope='session')
def relu():
    return make_activation('relu')


@pytest.fixture(scope='session')
def tanh():
    return make_activation('tanh')


@pytest.fixture(scope='session')
def swish():
    return make_activation('swish')


@pytest.fixture(scope='session')
def elu():
    return make_activation('elu')


@pytest.fixture(scope='session')
def hard_tanh():
    return make_activation('hard_tanh')


class CliRun:
    def __init__(self, code: int, stdout: str, stderr: str):
        self.code = code
        self.stdout = stdout
        self.stderr = stderr

    def json(self):
        return json.loads(self.stdout)

    def error(self):
        """The JSON diagnostic that follows the log lines on stderr"""
        start = 0 if self.stderr.startswith('{') else self.stderr.index('\n{') + 1
        return json.loads(self.stderr[start:])


@pytest.fixture
def run_cli():
    def _run(*argv):
        out, err = io.StringIO(), io.StringIO()
        code = cli.run([str(a) for a in argv], stdout=out, stderr=err)
        return CliRun(code, out.getvalue(), err.getvalue())
    return _run
