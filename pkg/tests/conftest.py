import numpy as np
import pytest


def numeric_grad(f, arr, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative error where the gradient is sizeable, absolute error below 1e-3."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    small = np.abs(analytic) < 1e-3
    err_abs = np.abs(analytic - numeric)
    assert np.all(err_abs[small] <= atol), f"max abs err {err_abs[small].max()}"
    big = ~small
    if big.any():
        rel = err_abs[big] / np.maximum(np.abs(analytic[big]), np.abs(numeric[big]))
        assert rel.max() <= rtol, f"max rel err {rel.max()}"


def activation_pattern(net, x, mode):
    """Signs of every activation input; a change means a perturbation crossed a kink."""
    from algan.nn import Activation
    from algan.tensor import Tensor

    h, signs = Tensor(x), []
    for layer in net.layers:
        if isinstance(layer, Activation):
            signs.append((h.data > 0).ravel())
        h = layer.forward(h, mode)
    return np.concatenate(signs) if signs else np.empty(0, dtype=bool)


def network_fd_errors(net, x, mode, rng, per_tensor=None, h=1e-5):
    """Finite-difference check of every parameter of ``net`` on a random linear readout.

    Checks all coordinates, or ``per_tensor`` random ones per parameter.
    Coordinates whose +/-h perturbation flips a ReLU/Leaky-ReLU input sign
    are non-differentiable there and are skipped (central differences are
    not a valid oracle at a kink).  Returns ``(worst_rel, worst_abs,
    n_checked, n_kinks, failing_names)`` with the tolerances of
    :func:`assert_grad_close`.
    """
    from algan.tensor import Tensor

    w = rng.uniform(-1, 1, (x.shape[0], net.out_dim))

    def f():
        return float((net.forward(x, mode) * Tensor(w)).sum().item())

    net.zero_grad()
    net.requires_grad_(True)
    (net.forward(x, mode) * Tensor(w)).sum().backward()
    base = activation_pattern(net, x, mode)
    worst_rel = worst_abs = 0.0
    checked = kinks = 0
    failing = []
    for name, p in net.parameters():
        order = rng.permutation(p.size) if per_tensor is not None else np.arange(p.size)
        target = p.size if per_tensor is None else min(per_tensor, p.size)
        done = 0
        for flat in order:
            if done >= target:
                break
            c = np.unravel_index(flat, p.shape)
            old = p.data[c]
            p.data[c] = old + h
            fp, pat_p = f(), activation_pattern(net, x, mode)
            p.data[c] = old - h
            fm, pat_m = f(), activation_pattern(net, x, mode)
            p.data[c] = old
            if not (np.array_equal(pat_p, base) and np.array_equal(pat_m, base)):
                kinks += 1
                continue
            done += 1
            num, ana = (fp - fm) / (2 * h), float(p.grad[c])
            if abs(ana) < 1e-3:
                err = abs(ana - num)
                worst_abs = max(worst_abs, err)
                bad = err > 1e-7
            else:
                err = abs(ana - num) / max(abs(ana), abs(num))
                worst_rel = max(worst_rel, err)
                bad = err > 1e-4
            if bad and name not in failing:
                failing.append(name)
        checked += done
    return worst_rel, worst_abs, checked, kinks, failing


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one (criterion, passed, detail) entry per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
