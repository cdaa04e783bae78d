"""Smoke test for the levi_kernel extension module.

Uses an installed module when available (``maturin develop`` in
crates/python); otherwise loads the library built by
``cargo build -p levi-kernel-python`` from target/.
"""

import importlib.util
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import levi_kernel

        return levi_kernel
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "liblevi_kernel_py.so"
        if lib.exists():
            spec = importlib.util.spec_from_file_location("levi_kernel", lib)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("levi_kernel not found: run `cargo build -p levi-kernel-python` first")


def close(a, b, rel):
    return abs(a - b) <= rel * abs(b)


def main():
    lk = load()
    print("levi_kernel", lk.__version__)

    # scale function of r^{-1-a}: h(1) = 2 (1/(2-a) + 1/a)
    for alpha in (0.5, 1.0, 1.5):
        sp = lk.ScaleProfile(lk.JumpModel.one_sided(alpha))
        assert close(sp.h(1.0), 2 * (1 / (2 - alpha) + 1 / alpha), 1e-6)
        assert abs(sp.alpha_h - alpha) <= 0.05

    # Cauchy kernel
    cauchy = lk.JumpModel.cauchy()
    for t in (0.25, 1.0):
        for u in (-3.0, 0.0, 1.5):
            v = lk.frozen_kernel(cauchy, t, 0.0, u, form="symmetrized")
            assert close(v, t / (math.pi * (t * t + u * u)), 1e-3), (t, u, v)

    model = lk.JumpModel.sine_stable(1.5, 1.0, 0.25, 0.5)
    assert all(ok for _, ok in model.validate())
    assert model.classify() == ("P1", "compensated")
    assert model.criticality_integral(0.3, 0.5) == 0.0

    par = lk.Parametrix(model, [0.125, 0.25], all_y=True, n=512, half_width=5.0)
    mass = par.mass(0.25, 0.0)
    assert abs(mass - 1.0) < 1e-2, mass
    lhs, rhs = par.chapman_kolmogorov(0.125, 0.125, 0.0, 0.2)
    assert close(lhs, rhs, 1e-2)
    assert par.q0_max() > 0

    y = [-0.5, 0.0, 0.5]
    density, half = lk.mc_density(model, 0.25, 0.0, y, paths=5000, bandwidth=0.1, seed=3)
    assert len(density) == 3 and all(h > 0 for h in half)
    assert lk.mc_density(model, 0.25, 0.0, y, paths=5000, bandwidth=0.1, seed=3)[0] == density

    checks = dict(lk.list_checks())
    assert len(checks) == 12 and "theorem_holder_level0" in checks

    # r^{-3.5} is not a Levy density: rejected once scale functions are needed
    try:
        lk.ScaleProfile(lk.JumpModel.sine_stable(2.5, 1.0, 0.25, 0.5))
    except ValueError:
        pass
    else:
        raise AssertionError("alpha > 2 accepted")
    try:
        lk.Parametrix(model, [0.25], form="sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown form accepted")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "tiny.toml"
        cfg.write_text(
            'name = "tiny"\nchecks = ["closed_form", "mass"]\n[model]\nfamily = "cauchy"\n'
            "[parametrix]\nt_eval = [0.25]\n[parametrix.space]\nn = 2048\nhalf_width = 10.0\n"
            "[settings.mass]\nt = [0.25]\nx = [0.0]\ntolerance = 1e-5\n"
        )
        failed, out, rows = lk.run_config(str(cfg), tmp, False)
        assert not failed, rows
        assert (pathlib.Path(out) / "summary.csv").exists()
        assert all(status == "pass" for _, status, _, _ in rows), rows

    print("smoke test ok")


if __name__ == "__main__":
    main()
