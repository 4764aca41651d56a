# Copyright 2026 The mcd Authors. All Rights Reserved.
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
# ==============================================================================
"""Change detection on bitemporal image pairs with state space encoders."""

from mcd._core import (
    ChangeDetector,
    ConfusionCounts,
    Error,
    FormatError,
    NumericError,
    ShapeError,
    accounting_report,
    evaluate,
    selective_scan,
    train,
    write_synthetic,
)

__all__ = [
    "ChangeDetector",
    "ConfusionCounts",
    "Error",
    "FormatError",
    "NumericError",
    "ShapeError",
    "accounting_report",
    "evaluate",
    "selective_scan",
    "train",
    "write_synthetic",
]
