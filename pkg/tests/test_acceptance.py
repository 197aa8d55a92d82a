"""Acceptance suite: one test per criterion, each printing its pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings, or `smalltime verify --suite full` for the same checks
through the CLI.
"""

from smalltime import acceptance


def _check(result):
    print(result.line())
    assert result.passed, result.details


def test_criterion_01_index_sets():
    _check(acceptance.criterion_01_index_sets())


def test_criterion_02_chen_grouplike():
    _check(acceptance.criterion_02_chen_grouplike())


def test_criterion_03_fbm_sampler():
    _check(acceptance.criterion_03_fbm_sampler())


def test_criterion_04_young_translation():
    _check(acceptance.criterion_04_young_translation())


def test_criterion_05_solver_exactness():
    _check(acceptance.criterion_05_solver_exactness())


def test_criterion_06_minimizer():
    _check(acceptance.criterion_06_minimizer())


def test_criterion_07_covariance():
    _check(acceptance.criterion_07_covariance())


def test_criterion_08_hormander():
    _check(acceptance.criterion_08_hormander())


def test_criterion_09_remainder_decay():
    _check(acceptance.criterion_09_remainder_decay())


def test_criterion_10_density_oracle():
    _check(acceptance.criterion_10_density_oracle())


def test_criterion_11_rate_prefactor():
    _check(acceptance.criterion_11_rate_prefactor())


def test_criterion_12_leading_coefficient():
    _check(acceptance.criterion_12_leading_coefficient())


def test_criterion_13_kusuoka_stroock():
    _check(acceptance.criterion_13_kusuoka_stroock())


def test_criterion_14_determinism(tmp_path):
    _check(acceptance.criterion_14_determinism(workdir=tmp_path))
