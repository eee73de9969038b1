"""Compare analytic gradients from the tape against central differences.

First a single dense layer by hand, then the whole built-in suite.
"""
import numpy as np

from taeclsa.gradsuite import format_results, run_suite
from taeclsa.tensor_engine import Tensor, dense, grad_check

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)))
W = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)


# non-scalar outputs are reduced with a fixed random projection
report = grad_check(lambda W, b: dense(x, W, b, "tanh"), [W, b], wrt=[0, 1])
print(f"dense layer: worst relative error {report.max_rel_error:.2e} over {report.n_checked} coordinates, passed={report.passed}")

results = run_suite(tol=1e-4, seed=0, points=3)
print(format_results(results, 1e-4))
