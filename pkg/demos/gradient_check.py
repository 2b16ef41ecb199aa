"""Finite-difference check of the analytic gradients for a few small networks."""

import numpy as np

from leancnn import grad_check, init_parameters, parse_architecture

NETS = {
    "conv-pool-dense": """
        input 8 8 3
        conv2d name=c1 filters=4 kernel=3 activation=relu
        maxpool2d name=p1
        flatten name=flat
        dense name=out units=3 activation=softmax
    """,
    "strided-same": """
        input 9 7 2
        conv2d name=c1 filters=3 kernel=3 stride=2 padding=same activation=relu
        conv2d name=c2 filters=2 kernel=1
        flatten name=flat
        dense name=out units=4 activation=softmax
    """,
}

rng = np.random.default_rng(0)
for label, text in NETS.items():
    spec = parse_architecture("\n".join(line.strip() for line in text.strip().splitlines()) + "\n")
    params = init_parameters(spec, 1, np.float64)
    x = rng.normal(size=(3, *spec.input_shape))
    y = rng.integers(0, spec.output_shape[0], 3)
    report = grad_check(spec, params, x, y)
    worst = ", ".join(f"{k}={v:.1e}" for k, v in report.per_layer().items())
    print(f"{label:16s} max rel err {report.max_error:.2e}  [{worst}]  {'ok' if report.passed else 'FAILED'}")
