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

"""
Error taxonomy. Every class carries the exit code the command line
reports when the error escapes a subcommand.
"""


class PanLabError(Exception):
    exit_code = 1


class UsageError(PanLabError, ValueError):
    """Wrong call: bad flag, wrong model kind, non-scalar loss..."""
    exit_code = 1


class ConfigurationError(UsageError):
    """Shape mismatch, invalid config value or unknown config key"""


class DataError(PanLabError, ValueError):
    """Bad input data or an I/O failure on a data file"""
    exit_code = 2


class FormatError(DataError):
    """Malformed binary file; ``offset`` is the byte position at fault"""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append("offset %d" % offset)
        if where:
            message = "%s (%s)" % (message, ", ".join(where))
        super().__init__(message)


class GenerationError(DataError):
    """Sample could not be rendered under the placement rules"""


class NumericError(PanLabError, ArithmeticError):
    """NaN/Inf values or a violated normalization precondition"""
    exit_code = 3


def exit_code_for(error):
    """Returns the CLI exit code for an exception instance"""
    if isinstance(error, PanLabError):
        return error.exit_code
    if isinstance(error, OSError):
        return DataError.exit_code
    return 1
