import pytest
from hypothesis import settings

from stateprobe import scenarios

settings.register_profile("fast", max_examples=60, deadline=None)
settings.load_profile("fast")


@pytest.fixture
def fw_net():
    return scenarios.firewall()


@pytest.fixture
def proxy_net():
    return scenarios.proxy_monitor()


def scenario(scens, name):
    return next(s for s in scens if s.name == name)
