"""Acceptance criteria at full configuration, one test per criterion.

These are slow (the Ito/Stratonovich and variance checks integrate
ensembles of several hundred members); the PASS/FAIL line of each is
printed so ``pytest -s`` shows the measured margins.
"""

import pytest

from salt_climate.acceptance import CRITERIA, run_criterion


def check(number):
    res = run_criterion(number)
    print(res.line())
    assert res.passed, res.line()


class TestAcceptance:
    def test_spectral_identities(self):
        check(1)

    def test_atmosphere_circulation_conserved(self):
        check(2)

    def test_ocean_circulation_conserved(self):
        check(3)

    def test_salt_circulation_conserved_pathwise(self):
        check(4)

    def test_stratonovich_and_ito_agree(self):
        check(5)

    def test_lasalt_mean_closure(self):
        check(6)

    def test_variance_identity(self):
        check(7)

    def test_compressible_conservation(self):
        check(8)

    def test_truncation_consistency(self):
        check(9)

    def test_zero_noise_reduction(self):
        check(10)

    def test_resolution_convergence(self):
        check(11)

    def test_temporal_order(self):
        check(12)


def test_unknown_criterion():
    with pytest.raises(KeyError):
        run_criterion(len(CRITERIA) + 1)
