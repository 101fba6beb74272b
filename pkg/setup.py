#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2021 Valory AG
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

from setuptools import find_packages, setup  # type: ignore


if __name__ == "__main__":
    setup(
        name="nscl-concept-learner",
        version="0.1.0",
        description="Learn visual concepts, words and programs from question answering on a synthetic tabletop world.",
        packages=find_packages(include=["packages", "packages.*"]),
        python_requires=">=3.8",
        install_requires=[
            "open-aea==1.48.0",
            "numpy>=1.21,<2",
            "pandas==1.5.3",
            "click>=8.0,<9",
        ],
        extras_require={"tests": ["pytest>=7", "hypothesis==6.21.6"]},
        entry_points={"console_scripts": ["nscl=packages.nscl.concept_learner.cli:main"]},
    )
