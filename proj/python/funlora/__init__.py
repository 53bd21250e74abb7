# Copyright (c) 2026 FunLoRA contributors
# SPDX-License-Identifier: Apache-2.0

"""Per-class functional LoRA adapters with conditional flow matching."""

from _funlora import (
    Adapter,
    aa,
    aia,
    init_adapter,
    integrate,
    make_task_stream,
    numerical_rank,
    ot_path,
    param_count,
    rshift,
    run_continual,
    singular_values,
)

__all__ = [
    "Adapter",
    "aa",
    "aia",
    "init_adapter",
    "integrate",
    "make_task_stream",
    "numerical_rank",
    "ot_path",
    "param_count",
    "rshift",
    "run_continual",
    "singular_values",
]
