import numpy as np
import pytest

from wavetrain import bloch, models, profiles, semigroup


@pytest.fixture(scope="session")
def rgl_profile():
    return profiles.solve_profile(models.real_ginzburg_landau(),
                                  *profiles.rgl_analytic(0.3, m_f=32),
                                  solve_for="c")


@pytest.fixture(scope="session")
def rgl_profile_m16():
    return profiles.solve_profile(models.real_ginzburg_landau(),
                                  *profiles.rgl_analytic(0.3, m_f=16),
                                  solve_for="c")


@pytest.fixture(scope="session")
def nagumo_profile():
    return profiles.solve_profile(models.nagumo(0.25),
                                  *profiles.nagumo_guess(0.25),
                                  solve_for="c")


@pytest.fixture(scope="session")
def stability(rgl_profile):
    return bloch.verify_diffusive_stability(rgl_profile, scan=128)


@pytest.fixture(scope="session")
def cutoff(rgl_profile, stability):
    return semigroup.default_cutoff(rgl_profile, stability=stability)


@pytest.fixture(scope="session")
def engine4(rgl_profile, stability, cutoff):
    return semigroup.SemigroupEngine(rgl_profile, 4, cutoff=cutoff,
                                     stability=stability)


@pytest.fixture(scope="session")
def engine8(rgl_profile, stability, cutoff):
    return semigroup.SemigroupEngine(rgl_profile, 8, cutoff=cutoff,
                                     stability=stability)


@pytest.fixture(scope="session")
def engine16(rgl_profile, stability, cutoff):
    return semigroup.SemigroupEngine(rgl_profile, 16, cutoff=cutoff,
                                     stability=stability)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=1234))
