"""Smoke test for the passive_gp extension module."""

import math

import passive_gp as pg


def main():
    assert pg.builtin_systems() == ["linear1", "diag3", "full3"]
    lower, upper = pg.system_domain("diag3")

    q, y = pg.generate_dataset("diag3", 40, noise_std=1.0, seed=1)
    qv, yv = pg.generate_dataset("diag3", 40, noise_std=1.0, seed=2)
    prior = pg.fit_prior(q, y)
    assert all(m >= 0 for m in prior)

    model = pg.Model.fit("diag-d-gp", q, y, [25.0] * 3, 100.0, [1.0, 1.0, 1.0])
    x = [3.0, -4.0, 60.0]
    tau = model.predict_torque(x)
    damping = model.predict_damping(x)
    recon = [sum(damping[i][j] * x[j] for j in range(3)) for i in range(3)]
    assert all(math.isclose(a, b, rel_tol=1e-10, abs_tol=1e-10) for a, b in zip(tau, recon))
    assert math.isclose(model.dissipated_power(x), sum(a * b for a, b in zip(x, tau)), rel_tol=1e-12)

    c, feasible, margin = pg.compute_bound(q, y, prior, 100.0, [50.0, 50.0, 50.0])
    hv, noise, alpha = pg.enforce_bound(q, y, prior, 100.0, [50.0, 50.0, 50.0])
    assert noise == 100.0 and 0 < alpha <= 1
    assert pg.compute_bound(q, y, prior, 100.0, hv)[1]

    full = pg.Model.optimize("full-d-gp", q, y, qv, yv, [25.0] * 3, 100.0, budget=10, constrained=True)
    evaluated, min_power, violations = full.passivity_sweep(lower, upper, samples=2000, seed=0)
    assert violations == 0, (min_power, violations)

    back = pg.Model.from_text(full.to_text())
    assert back.predict_torque(x) == full.predict_torque(x)

    per_output, aggregate = pg.nmse(y, y)
    assert aggregate == 0.0

    try:
        pg.Model.fit("nope", q, y, [1.0] * 3, 1.0, [1.0] * 3)
    except ValueError:
        pass
    else:
        raise AssertionError("bad kind accepted")

    print(f"ok: c={c:.3e} feasible={feasible} alpha={alpha:.3e} sweep={evaluated} min_power={min_power:.3e}")


if __name__ == "__main__":
    main()
