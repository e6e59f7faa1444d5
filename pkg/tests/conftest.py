import os
from pathlib import Path

import pytest

from svdcomp.calibration import calibrate
from svdcomp.lifetable import Sex, load_hmd_directory
from svdcomp.synthetic import synthetic_corpora

import acceptance_log

HMD_ENV = "SVDCOMP_HMD_DIR"
LOGQUAD_ENV = "SVDCOMP_LOGQUAD_CSV"


@pytest.fixture(scope="session")
def corpora():
    return synthetic_corpora()


@pytest.fixture(scope="session")
def corpus_f(corpora):
    return corpora[Sex.FEMALE]


@pytest.fixture(scope="session")
def corpus_m(corpora):
    return corpora[Sex.MALE]


@pytest.fixture(scope="session")
def model(corpora):
    return calibrate(corpora[Sex.FEMALE], corpora[Sex.MALE])


@pytest.fixture(scope="session")
def noisy_corpora():
    return synthetic_corpora(noise=0.05, seed=11)


@pytest.fixture(scope="session")
def noisy_model(noisy_corpora):
    return calibrate(noisy_corpora[Sex.FEMALE], noisy_corpora[Sex.MALE])


@pytest.fixture(scope="session")
def hmd_dir():
    path = os.environ.get(HMD_ENV)
    if not path:
        pytest.skip(f"HMD archive not supplied (set {HMD_ENV})")
    if not Path(path).is_dir():
        pytest.fail(f"{HMD_ENV}={path} is not a directory")
    return Path(path)


@pytest.fixture(scope="session")
def hmd_corpora(hmd_dir):
    return load_hmd_directory(hmd_dir)


@pytest.fixture(scope="session")
def hmd_model(hmd_corpora):
    return calibrate(hmd_corpora[Sex.FEMALE], hmd_corpora[Sex.MALE])


@pytest.fixture(scope="session")
def logquad_csv():
    path = os.environ.get(LOGQUAD_ENV)
    if not path:
        pytest.skip(f"external Log-Quad coefficients not supplied (set {LOGQUAD_ENV})")
    return Path(path)


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)
