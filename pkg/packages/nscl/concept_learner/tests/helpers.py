# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2024 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""Helpers shared by the concept learner tests."""

import os
from typing import Any, Sequence

import pytest

from packages.nscl.concept_learner.worldgen import ObjectSpec, SceneRecord, scene_from_objects


_skip_unless_enabled = pytest.mark.skipif(
    os.environ.get("NSCL_RUN_SLOW", "") == "",
    reason="slow acceptance run, set NSCL_RUN_SLOW=1 to enable",
)


def skip_slow_tests(test: Any) -> Any:
    """Mark a test or test class as slow and skip it unless slow runs are enabled."""
    return pytest.mark.slow(_skip_unless_enabled(test))


def make_object(  # pylint: disable=too-many-arguments
    color: str = "red",
    shape: str = "cube",
    x: float = 0.5,
    y: float = 0.5,
    size: str = "small",
    material: str = "rubber",
) -> ObjectSpec:
    """Build an object with defaults for the attributes a test does not care about."""
    return ObjectSpec(color=color, shape=shape, size=size, material=material, x=x, y=y)


def make_scene(objects: Sequence[ObjectSpec], seed: int = 0, noise: float = 0.0) -> SceneRecord:
    """Build a noise-free scene from explicit objects."""
    return scene_from_objects(objects, seed=seed, noise=noise)
