import pytest
from hypothesis import HealthCheck, settings

from fraudproof.commit import PreparedModel
from fraudproof.corpus import fig5, fig5_inputs, get_model, random_inputs

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fig5_model():
    return PreparedModel(fig5())


@pytest.fixture(scope="session")
def fig5_values():
    return fig5_inputs()


@pytest.fixture(scope="session")
def mlp():
    g = get_model("mini-mlp")
    return PreparedModel(g), random_inputs(g, 0)
