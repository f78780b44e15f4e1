import os

import pytest
from hypothesis import settings

from slicekit.marketplace import ResourceOffer, ResourceType

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def make_offer(offer_id="o1", rtype=ResourceType.VM, domain="d1", price=1.0, renewable=True,
               pue=1.2, location=(0.0, 0.0), hops=1, capacity=10, **kw) -> ResourceOffer:
    return ResourceOffer(offer_id, rtype, domain, price, renewable, pue, location, hops,
                         capacity, **kw)


@pytest.fixture
def offer_factory():
    return make_offer
