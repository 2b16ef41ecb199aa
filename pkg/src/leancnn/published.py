"""Published reference figures for the two architectures, and the notes the
cost report attaches when the analytic values differ from them.

These are reference points only. The analytic values computed by
:mod:`leancnn.cost` are what the tool reports.
"""

from __future__ import annotations

# Layer table of the custom CNN as published: (name, output shape, params).
CUSTOM_CNN_TABLE = (
    ("input", (224, 224, 3), 0),
    ("c1", (224, 224, 32), 896),
    ("p1", (112, 112, 32), 0),
    ("c2", (112, 112, 64), 18_496),
    ("p2", (56, 56, 64), 0),
    ("c3", (56, 56, 128), 73_856),
    ("p3", (28, 28, 128), 0),
    ("flatten", (100352,), 0),
    ("d1", (256,), 25_690_112),
    ("drop", (256,), 0),
    ("out", (7,), 1_799),
)

CUSTOM_CNN_PARAMS_ROUNDED = 692_000
CUSTOM_CNN_PARAMS_TOTAL = 692_807
CUSTOM_CNN_FLOPS = 30_040_000
CUSTOM_CNN_ACCURACY = 87.05

RESNET50_PARAMS_ROUNDED = 23_900_000
RESNET50_TL_PARAMS = 23_661_703
RESNET50_FLOPS = 4_000_000_000
RESNET50_ACCURACY = 89.08

FLOP_DEVIATION_TEXT = "+13,216.76%"
ACCURACY_DEVIATION_TEXT = "+0.022%"


def notes_for(name: str, report) -> list[str]:
    notes = []
    if name == "custom-cnn":
        try:
            d1 = report.row("d1")
        except KeyError:
            return notes
        if d1.params == 25_690_368:
            notes.append(
                "d1 reports 25,690,368 params (weights + 256 biases); the published layer table "
                "prints 25,690,112, i.e. the same layer without its bias."
            )
        notes.append(
            f"published totals {CUSTOM_CNN_PARAMS_TOTAL:,} params / {CUSTOM_CNN_FLOPS / 1e6:.2f}M FLOPs "
            "cannot be derived from the layer table; analytic values are shown above."
        )
    elif name == "resnet50":
        notes.append(
            f"published ResNet50 + TL total is {RESNET50_TL_PARAMS:,} params; its head is unspecified, "
            "so the default head (global average pool -> dense softmax) need not match it."
        )
    return notes
