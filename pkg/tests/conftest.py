import pytest

from protoadapt.evaluation import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def fixture_spec():
    return SyntheticSpec()  # pinned: C=10, d=64, conc=2.5, angle=0.6, seed=42


@pytest.fixture(scope="session")
def synth_train(fixture_spec):
    return generate_synthetic(fixture_spec, "train")


@pytest.fixture(scope="session")
def synth_test(fixture_spec):
    cache, _ = generate_synthetic(fixture_spec, "test")
    return cache
