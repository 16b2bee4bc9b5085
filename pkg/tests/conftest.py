import numpy as np
import pytest

from anticipate import autodiff as ad
from anticipate.autodiff import Tensor

# Finite-difference pass thresholds for the two precisions.
FD_TOL_32 = 1e-4
FD_TOL_64 = 1e-6


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def param_locations(params):
    """Map parameter name -> (owner object, attribute) for swapping."""
    owners = {}
    for name, _ in params.named():
        prefix, attr = name.split(".")
        owner = {"fa": params.fa, "lstm": params.lstm, "head": params}[prefix]
        owners[name] = (owner, attr)
    return owners


def loss_wrt_param(params, name, loss_fn):
    """Wrap loss_fn(params) as f(x) differentiating w.r.t. one named parameter.

    The checker supplies its own tensor x; the wrapper installs it in the
    parameter slot for the duration of the call.
    """
    owner, attr = param_locations(params)[name]
    original = getattr(owner, attr)

    def f(x):
        setattr(owner, attr, x)
        try:
            return loss_fn(params)
        finally:
            setattr(owner, attr, original)

    return f, original


def to_lists(arr):
    return np.asarray(arr, dtype=np.float64).tolist()


def weights_as_lists(params):
    """Model parameters as the plain-list dict the reference oracles take."""
    out = {}
    for name, tensor in params.named():
        key = name.split(".", 1)[1]
        if key == "b_r":
            out[key] = float(tensor.data[0])
        else:
            out[key] = to_lists(tensor.data)
    return out


def random_tensor(rng, shape, dtype=np.float64, scale=1.0, requires_grad=False):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=requires_grad, dtype=dtype)


def check_op_gradient(make_loss, x_data, dtype, tol, eps=1e-5):
    """finite_diff_check on a scalar-valued op composition, asserting tol."""
    err = ad.finite_diff_check(make_loss, Tensor(x_data, dtype=dtype), eps=eps)
    assert err < tol, f"gradient error {err} >= {tol}"
    return err
