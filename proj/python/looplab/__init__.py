# Copyright 2026 looplab Authors
# SPDX-License-Identifier: Apache-2.0
"""Loop-generation red teaming against a toy vision-language model."""

from ._core import *  # noqa: F401,F403
