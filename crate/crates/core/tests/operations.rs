//! Known-value checks of the public operations.

use std::f64::consts::{PI, SQRT_2};

use svasym::grid::GridFn;
use svasym::hamiltonian::{self, CurveOptions, Method};
use svasym::measures::{self, LogSpeed, WindowSpec};
use svasym::model::{self, boundary_classification, Boundary, ClauseId, StateSpace};
use svasym::poisson;
use svasym::rates::{self, RateSource};
use svasym::simulate::{self, McConfig, Tilt, XyOptions};
use svasym::verify::{self, fixtures};
use svasym::{Error, ModelParams, Regime, VolFnSpec};

fn ou() -> ModelParams {
    fixtures::ou_sqrt_abs()
}

fn cir(m: f64, nu: f64, beta: f64) -> ModelParams {
    ModelParams {
        m,
        nu,
        beta,
        rho: 0.0,
        rate: 0.0,
        sigma: VolFnSpec::power_abs(1.0, 0.25, 0.0),
        y0: 1.0,
        x0: 0.0,
    }
}

#[test]
fn validation_examples() {
    let r = model::validate(&cir(0.5, 1.2, 0.5));
    assert!(!r.clause(ClauseId::Positivity).pass);
    assert!(model::validate(&fixtures::ou_constant(0.3, 0.0)).pass());
    let mut p = cir(1.0, 1.0, 0.7);
    p.sigma = VolFnSpec::power_abs(1.0, 0.4, 0.0);
    assert!(!model::validate(&p).clause(ClauseId::VolGrowth).pass);
}

#[test]
fn boundary_examples() {
    assert_eq!(boundary_classification(&cir(1.0, 1.0, 0.75)).unwrap(), Boundary::Inaccessible);
    assert_eq!(boundary_classification(&cir(1.0, 1.0, 0.5)).unwrap(), Boundary::Inaccessible);
    assert!(matches!(boundary_classification(&ou()), Err(Error::NotApplicable(_))));
}

#[test]
fn sigma_examples() {
    let half = StateSpace::PositiveHalfLine;
    assert_eq!(model::sigma_eval(&VolFnSpec::constant(0.3), half, 5.0).unwrap(), 0.3);
    assert_eq!(model::sigma_eval(&VolFnSpec::power_abs(1.0, 0.5, 0.0), half, 4.0).unwrap(), 2.0);
    let tab = VolFnSpec::tabulated(vec![1.0, 2.0], vec![1.0, 2.0], 0.0);
    assert!((model::sigma_eval(&tab, half, 1.5).unwrap() - 1.5).abs() < 1e-15);
    assert!(matches!(model::sigma_eval(&tab, half, -1.0), Err(Error::Domain { .. })));
}

#[test]
fn scale_density_examples() {
    assert!((measures::scale_density(&ou(), 0.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    let c = cir(1.0, 1.0, 0.5);
    assert!((measures::scale_density(&c, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    let s2 = measures::scale_density(&c, 0.0, 2.0).unwrap();
    assert!((s2 - 0.25 * 1f64.exp().powi(2)).abs() < 1e-10, "{s2}");
}

#[test]
fn invariant_density_examples() {
    let spec = WindowSpec::default();
    let d = measures::invariant_density(&ou(), 0.0, &spec).unwrap();
    for (y, v) in d.ys().iter().zip(&d.values) {
        assert!((v - (-0.5 * y * y).exp() / (2.0 * PI).sqrt()).abs() < 1e-8);
    }
    assert!((d.integral() - 1.0).abs() < 1e-6);
    let g = measures::invariant_density(&cir(1.0, 1.0, 0.5), 0.0, &spec).unwrap();
    for (y, v) in g.ys().iter().zip(&g.values) {
        assert!((v - 4.0 * y * (-2.0 * y).exp()).abs() < 1e-6);
    }
    assert!((g.integral() - 1.0).abs() < 1e-6);
}

#[test]
fn sigma_bar_examples() {
    assert_eq!(measures::sigma_bar_sq(&fixtures::ou_constant(0.3, 0.0)).unwrap().value, 0.3 * 0.3);
    let v = measures::sigma_bar_sq(&ou()).unwrap().value;
    assert!((v - (2.0 / PI).sqrt()).abs() < 1e-6);
    // E[Y^{1/2}] under Gamma(2, 1/2) is Γ(5/2)/Γ(2)·(1/2)^{1/2}
    let g = measures::sigma_bar_sq(&cir(1.0, 1.0, 0.5)).unwrap().value;
    let exact = 0.75 * PI.sqrt() * 0.5f64.sqrt();
    assert!((g - exact).abs() < 1e-6, "{g} vs {exact}");
}

#[test]
fn dirichlet_and_reversibility_examples() {
    let ls = LogSpeed::build(&ou(), 0.0, &WindowSpec::default()).unwrap();
    let one = GridFn::sample(&ls.grid, |_| 1.0);
    assert_eq!(measures::dirichlet_form(&ls, &one).unwrap(), 0.0);
    let lin = GridFn::sample(&ls.grid, |y| y);
    assert!((measures::dirichlet_form(&ls, &lin).unwrap() - 1.0).abs() < 1e-6);
    let f = GridFn::sample(&ls.grid, |y| (-(y * y)).exp());
    let g = GridFn::sample(&ls.grid, |y| (-(y - 0.5) * (y - 0.5)).exp());
    assert_eq!(measures::reversibility_check(&ls, &f, &f).unwrap(), 0.0);
    assert!(measures::reversibility_check(&ls, &f, &g).unwrap() < 1e-6);
}

#[test]
fn corrector_examples() {
    let spec = WindowSpec::default();
    let c = poisson::solve_corrector(&fixtures::ou_constant(0.3, 0.0), 1.0, &spec).unwrap();
    assert!(c.chi.iter().all(|v| *v == 0.0) && c.chi_prime.iter().all(|v| *v == 0.0));
    let z = poisson::solve_corrector(&ou(), 0.0, &spec).unwrap();
    assert!(z.chi.iter().all(|v| *v == 0.0));
    assert!(poisson::growth_bound_check(&z, &ou()).unwrap().pass);
    let r = poisson::solve_corrector(&ou(), 1.0, &spec).unwrap();
    assert!(r.core_residual() < 1e-4);
    let cp = cir(1.0, 1.0, 0.5);
    let g = poisson::solve_corrector(&cp, 1.0, &spec).unwrap();
    assert!(poisson::growth_bound_check(&g, &cp).unwrap().pass);
}

#[test]
fn hamiltonian_examples() {
    let spec = WindowSpec::default();
    let mut c = fixtures::ou_constant(0.3, 0.6);
    assert!((hamiltonian::hbar0_eigen(&c, 2.0, &spec).unwrap().value - 0.18).abs() < 1e-8);
    c.rho = 0.0;
    assert_eq!(hamiltonian::hbar0_eigen(&c, 0.0, &spec).unwrap().value, 0.0);
    let v = hamiltonian::hbar0_eigen(&ou(), 1.0, &spec).unwrap().value;
    assert!(v >= 0.5 * (2.0 / PI).sqrt() - 1e-8);
}

#[test]
fn mc_hamiltonian_constant_sigma_is_exact() {
    let mc = McConfig {
        paths: 10_000,
        ..McConfig::default()
    };
    let h = hamiltonian::hbar0_mc(
        &fixtures::ou_constant(0.3, 0.0),
        2.0,
        12.0,
        &mc,
        simulate::FkEstimator::Particle,
    )
    .unwrap();
    assert!((h.tilted.value - 0.18).abs() < 1e-12);
    assert!((h.girsanov.value - 0.18).abs() < 1e-12);
    assert!(hamiltonian::hbar0_mc(&ou(), 1.0, 5.0, &mc, simulate::FkEstimator::Particle).is_err());
}

#[test]
fn curve_and_legendre_examples() {
    let p: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.5).collect();
    let opts = CurveOptions::default();
    let c = hamiltonian::build_curve(&fixtures::ou_constant(0.3, 0.0), &p, Method::ClosedForm, &opts).unwrap();
    let l = hamiltonian::legendre(&c, &[0.0, 0.3], false).unwrap();
    assert_eq!(l.values[0], 0.0);
    assert!((l.values[1] - 0.5).abs() < 1e-12);
    let e = hamiltonian::build_curve(&ou(), &p, Method::Eigen, &opts).unwrap();
    assert_eq!(e.values[8], 0.0);
    let sbar = (2.0 / PI).sqrt();
    for (h, p) in e.values.iter().zip(&p) {
        assert!(*h >= 0.5 * sbar * p * p - 1e-8);
    }
    assert!(matches!(
        hamiltonian::build_curve(&ou(), &[-1.0, 1.0, 2.0], Method::Eigen, &opts),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        hamiltonian::build_curve(&ou(), &p, Method::ClosedForm, &opts),
        Err(Error::NotApplicable(_))
    ));
}

#[test]
fn regime_two_is_below_regime_four_for_uncorrelated_ou() {
    let p: Vec<f64> = (-16..=16).map(|i| i as f64 * 0.25).collect();
    let c = hamiltonian::build_curve(&ou(), &p, Method::Eigen, &CurveOptions::default()).unwrap();
    let l = hamiltonian::legendre(&c, &[0.0], false).unwrap();
    let sbar = measures::sigma_bar_sq(&ou()).unwrap().value;
    let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.05).collect();
    // both rates agree to second order at x0, so the gap is relative
    let rows = verify::regime_compare(&ou(), &l, sbar, &xs, 1.0, 1e-2).unwrap();
    assert!(rows.iter().all(|r| r.ordered));
    assert_eq!(rows[20].i2, 0.0);
    assert_eq!(rows[20].i4, 0.0);
    let src = RateSource::Regime2 { legendre: l.clone() };
    let logk: Vec<f64> = xs.iter().copied().filter(|x| x.abs() > 1e-9).collect();
    let smile = rates::implied_vol_curve(&src, 0.0, 1.0, &logk, sbar, 1e-6).unwrap();
    assert!(smile.values.iter().all(|v| *v >= sbar * (1.0 - 1e-2)));
    let price = rates::option_price_log_asymptote(0.3, 0.0, 1.0, &src, 1e-6).unwrap();
    assert!((price.value + l.eval(-0.3).unwrap().value).abs() < 1e-15);
}

#[test]
fn atm_probe_on_ou_runs() {
    let p: Vec<f64> = (-16..=16).map(|i| i as f64 * 0.25).collect();
    let c = hamiltonian::build_curve(&ou(), &p, Method::Eigen, &CurveOptions::default()).unwrap();
    let l = hamiltonian::legendre(&c, &[0.0], false).unwrap();
    let probe = rates::atm_conjecture_probe(&l, 1.0, &[0.4, 0.2, 0.1, 0.05], 0.8, 1e-14).unwrap();
    assert_eq!(probe.label, "CONJECTURE PROBE");
    assert!(probe.ratio.iter().all(|r| r.is_finite() && *r > 0.0));
}

#[test]
fn gaussian_log_price_at_unit_scales() {
    let params = ModelParams {
        rate: 0.05,
        x0: 0.1,
        ..fixtures::ou_constant(0.3, 0.0)
    };
    let mc = McConfig {
        paths: 100_000,
        steps_per_unit_time: 20,
        ..McConfig::default()
    };
    // δ = ε^r = 1 when ε = 1
    let b = simulate::simulate_xy(&params, Regime::Fast, 1.0, 1.0, &mc, XyOptions::default()).unwrap();
    let n = b.paths() as f64;
    let mean = svasym::stats::mean(&b.x_terminal);
    let var = svasym::stats::variance(&b.x_terminal);
    let (m0, v0) = (0.1 + 0.05 - 0.045, 0.09);
    assert!((mean - m0).abs() < 4.0 * (v0 / n).sqrt(), "{mean}");
    assert!((var - v0).abs() < 4.0 * v0 * (2.0 / n).sqrt(), "{var}");
}

#[test]
fn deterministic_relaxation_without_noise() {
    let params = ModelParams {
        nu: 0.0,
        y0: 2.0,
        m: 0.5,
        ..fixtures::ou_constant(0.2, 0.0)
    };
    let mc = McConfig {
        paths: 3,
        steps_per_unit_time: 100_000,
        ..McConfig::default()
    };
    let opts = XyOptions {
        record_y: true,
        record_integrals: false,
    };
    let b = simulate::simulate_xy(&params, Regime::Fast, 0.5, 1.0, &mc, opts).unwrap();
    // ε/δ = 2, so Y_1 = m + (y0 − m)e^{−2}; Euler converges at O(ds)
    let exact = 0.5 + 1.5 * (-2f64).exp();
    for y in b.y_terminal.unwrap() {
        assert!((y - exact).abs() < 1e-5, "{y} vs {exact}");
    }
}

#[test]
fn tilted_constant_sigma_mean_shift() {
    let params = fixtures::ou_constant(0.5, 0.6);
    let mc = McConfig {
        paths: 20_000,
        ..McConfig::default()
    };
    let b = simulate::simulate_tilted(&params, &Tilt::P(1.5), 0.0, 8.0, 0.0, |_| 0.0, &mc).unwrap();
    let shift = 0.6 * 1.5 * 0.5 * SQRT_2;
    let exact = shift * (1.0 - (-8f64).exp());
    let mean = svasym::stats::mean(&b.y_terminal);
    let sd = (svasym::stats::variance(&b.y_terminal) / 20_000.0).sqrt();
    assert!((mean - exact).abs() < 4.0 * sd, "{mean} vs {exact}");
}

#[test]
fn ergodic_average_of_one_is_one() {
    let mc = McConfig {
        paths: 100,
        ..McConfig::default()
    };
    let e = simulate::ergodic_average(&ou(), &Tilt::None, |_| 1.0, 5.0, &mc).unwrap();
    assert!((e.value - 1.0).abs() < 1e-12);
}

#[test]
fn moment_closed_form_with_vanishing_exponent() {
    let params = ModelParams {
        x0: 0.3,
        ..fixtures::ou_constant(1e-6, 0.0)
    };
    let mc = McConfig {
        paths: 2000,
        steps_per_unit_time: 20,
        ..McConfig::default()
    };
    let r = simulate::moment_check(&params, Regime::Fast, &[0.5, 0.25], 2.0, 1.0, &mc).unwrap();
    for row in &r.rows {
        assert!((row.estimate.value - row.closed_form.unwrap()).abs() < 1e-6);
        assert!((row.estimate.value - row.eps * 0.6).abs() < 1e-6);
    }
    assert!(r.decreasing);
}

#[test]
fn half_line_scheme_contract() {
    let mc = McConfig {
        paths: 100_000,
        ..McConfig::default()
    };
    let opts = XyOptions {
        record_y: true,
        record_integrals: true,
    };
    let b = simulate::simulate_xy(&cir(1.0, 1.0, 0.5), Regime::Fast, 0.3, 1.0, &mc, opts).unwrap();
    assert_eq!(b.negative_samples, 0);
    assert_eq!(b.negative_sigma, 0);
    assert!(b.x_terminal.iter().all(|x| x.is_finite()));
    assert!(b.y_terminal.unwrap().iter().all(|y| *y >= 0.0));
}

#[test]
fn coarse_steps_are_rejected() {
    let mc = McConfig {
        steps_per_unit_time: 5,
        ..McConfig::default()
    };
    assert!(matches!(
        simulate::simulate_xy(&ou(), Regime::Fast, 0.5, 1.0, &mc, XyOptions::default()),
        Err(Error::Stability(_))
    ));
}

#[test]
fn untilted_terminal_law_matches_invariant_density() {
    let params = ou();
    let mc = McConfig {
        paths: 2000,
        ..McConfig::default()
    };
    let b = simulate::simulate_tilted(&params, &Tilt::None, 0.0, 15.0, 0.0, |_| 0.0, &mc).unwrap();
    let mut ys = b.y_terminal.clone();
    ys.sort_by(f64::total_cmp);
    let n = ys.len() as f64;
    // Cramér–von Mises against the N(0, 1) distribution function
    let w2 = 1.0 / (12.0 * n)
        + ys.iter()
            .enumerate()
            .map(|(i, y)| (svasym::stats::normal_cdf(*y) - (2.0 * i as f64 + 1.0) / (2.0 * n)).powi(2))
            .sum::<f64>();
    assert!(w2 < 0.743, "CvM statistic {w2}");
}
