#!/usr/bin/env python
# -*- coding: UTF-8 -*-
#
# PanLab: Progressive attention networks for query-driven reference tasks
#
# Copyright 2026 The PanLab Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from . import version

__version__ = version.version
__author__ = "The PanLab Authors"

from . import (  # noqa: E402
    exceptions, tensor, layers, models, stats, utils, dataset, training,
    reports
)

__all__ = [
    "exceptions", "tensor", "layers", "models", "stats", "utils", "dataset",
    "training", "reports"
]
