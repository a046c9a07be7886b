import random

import pytest

from rankone.construction import (
    ConstructionParams,
    SpacerPlan,
    StageParams,
    chacon_params,
    katok_params,
    odometer_params,
    ornstein_params,
    paired_preset,
    realize,
)


@pytest.fixture(scope="session")
def odometer():
    return realize(odometer_params(20))


@pytest.fixture(scope="session")
def chacon():
    return realize(chacon_params(11))


@pytest.fixture(scope="session")
def ornstein():
    return realize(ornstein_params(5, seed=7))


@pytest.fixture(scope="session")
def katok():
    return realize(katok_params(5, seed=3))


@pytest.fixture(scope="session")
def paired_pair():
    return paired_preset("odometer", stages=9, cut_count=3)


@pytest.fixture(scope="session")
def mixing():
    # engineered for a positive partial-mixing floor at the base: heavy early
    # smearing (bounds near the height), light later stages
    stages = []
    h = 1
    for j, divisor in enumerate((2, 3, 6, 40, 40, 40)):
        bound = max(2, h // divisor)
        stages.append(StageParams(10, SpacerPlan.stochastic(bound=bound, seed=5 * 1009 + j)))
        h = 10 * h + 10 * bound // 2
    return realize(ConstructionParams(tuple(stages)))


def random_params(rng: random.Random, max_stages: int = 7, tag: int = 0) -> ConstructionParams:
    """Small random construction: mixed plan kinds, bounded growth."""
    stages = []
    for j in range(rng.randint(2, max_stages)):
        r = rng.randint(2, 5)
        kind = rng.choice(("flat", "pattern", "stochastic"))
        if kind == "flat":
            plan = SpacerPlan.flat(rng.randint(0, 3))
        elif kind == "pattern":
            plan = SpacerPlan.pattern([rng.randint(0, 4) for _ in range(r)])
        else:
            plan = SpacerPlan.stochastic(rng.randint(1, 4), seed=tag * 977 + j)
        stages.append(StageParams(r, plan))
    return ConstructionParams(tuple(stages))
