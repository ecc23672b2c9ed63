from __future__ import annotations

import pytest

from deskagent.fast import RetrievalPolicy, build_dataset
from deskagent.oracle import solve
from deskagent.world import bundled_variations, bundled_world, load_task_family, load_world

SMALL_WORLD = """
schema_version: 1
name: small
start_room: den
rooms:
  - {name: den, connections: [lab]}
  - {name: lab, connections: [den]}
objects:
  - {name: crate, properties: [container, openable], states: [closed], container: den}
  - {name: pan, properties: [container, portable], container: den}
  - {name: burner, properties: [container, surface, device, heat_source], states: [deactivated], container: lab}
  - {name: broth, properties: [liquid], states: [liquid], container: crate, boiling_point: 212}
  - {name: probe, properties: [portable, thermometer], container: lab}
  - {name: jar, properties: [container], container: lab}
  - {name: pip, properties: [portable, seed], container: jar}
  - {name: can, properties: [portable, waterer], container: den}
"""

SMALL_FAMILY = """
schema_version: 1
family: simmer
description: Your task is to boil {substance}.
slots:
  substance: [broth]
milestones:
  - {name: in pan, points: 40, when: {inside: ["{substance}", pan]}}
  - {name: boiled, points: 60, when: {has_state: ["{substance}", gas]}}
splits:
  train: {count: 1, seed: 1}
"""


@pytest.fixture(scope="session")
def world():
    return bundled_world()


@pytest.fixture(scope="session")
def train_variations():
    return bundled_variations("train")


@pytest.fixture(scope="session")
def test_variations():
    return bundled_variations("test")


@pytest.fixture(scope="session")
def variation_by_id(train_variations, test_variations):
    return {v.id: v for v in train_variations + test_variations}


@pytest.fixture(scope="session")
def oracle_trajectories(world, train_variations):
    return [solve(world, v) for v in train_variations]


@pytest.fixture(scope="session")
def policy(world, oracle_trajectories):
    return RetrievalPolicy(catalog=world.catalog).fit_examples(build_dataset(oracle_trajectories))


@pytest.fixture(scope="session")
def small_world():
    return load_world(SMALL_WORLD)


@pytest.fixture(scope="session")
def small_variation(small_world):
    return load_task_family(SMALL_FAMILY, small_world).variations("train")[0]
