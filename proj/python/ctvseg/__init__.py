# Copyright 2026 The ctvseg Authors
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

"""Python access to the ctvseg core routines.

Volumes are NumPy arrays indexed (z, y, x); spacings are (dx, dy, dz) in mm.
Training and inference live in the ``ctvseg`` command line tool.
"""

from ._ctvseg import (
    DataError,
    UsageError,
    ahe,
    asd,
    contour_quality,
    dice_loss,
    dice_loss_grad,
    distance_target,
    dsc,
    generate_phantom,
    paired_t_test,
    pearson_r,
    read_case,
    read_mivol,
    sqrt_dice_loss,
    sqrt_dice_loss_grad,
    structures,
    summarize,
    write_mivol,
)

__all__ = [name for name in dir() if not name.startswith("_")]
