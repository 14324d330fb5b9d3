//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use legendre_vlasov::bench::{self, execute, RunReport};
use legendre_vlasov::fit::{fit_damping_rate, fit_period};
use legendre_vlasov::integrator::NoObserver;
use legendre_vlasov::operator::{field_work, Background};
use legendre_vlasov::{
    run, Coefficients, DomainConfig, InitialProfile, Model, Modes, PenaltyMode, RunStatus, SolverConfig,
    SpectralState, Species, VelocityBasis,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn preset_run(name: &str, overrides: &[&str]) -> RunReport {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = bench::apply_overrides(&bench::preset(name).unwrap(), &o).unwrap();
    execute(&cfg, None).unwrap()
}

fn landau(nu: &str) -> RunReport {
    preset_run(
        "landau",
        &[
            "n_legendre=128",
            "n_modes_x=17",
            "dt=0.05",
            "t_final=50",
            "gamma=0.5",
            "penalty_mode=skip_first_three",
            nu,
        ],
    )
}

fn max_in(series: &[(f64, f64)], t0: f64, t1: f64) -> f64 {
    series
        .iter()
        .filter(|(t, _)| *t > t0 && *t <= t1)
        .map(|p| p.1)
        .fold(0.0, f64::max)
}

fn criteria_1_to_4(collisional: &RunReport, collisionless: &RunReport) -> Vec<Verdict> {
    let series = collisional.field_series(0);
    let c1 = match fit_damping_rate(&series, (2.0, 20.0), 0.0) {
        Ok(rate) => verdict(
            (rate + 0.85).abs() <= 0.085,
            format!("damping rate {rate:.4} (target -0.85 ± 10%)"),
        ),
        Err(e) => verdict(false, e.to_string()),
    };
    let late = max_in(&series, 25.0, 50.0);
    let recurrence = max_in(&collisionless.field_series(0), 25.0, 50.0);
    let c2 = verdict(
        late <= 1e-8 && recurrence >= 100.0 * late,
        format!("max |E1| on t > 25: nu=1 {late:.3e} (≤ 1e-8), nu=0 {recurrence:.3e} (ratio {:.1e} ≥ 100)", recurrence / late),
    );
    let s = &collisional.stats.conservation;
    let mass = s.max_rel_mass_change.max(s.max_abs_mass_balance);
    let c3 = verdict(
        collisional.status == RunStatus::Completed && mass < 1e-11 && s.max_abs_momentum_change < 1e-10,
        format!(
            "{} steps: relative mass change {mass:.2e} (< 1e-11), |P - P0| {:.2e} (< 1e-10)",
            s.steps, s.max_abs_momentum_change
        ),
    );
    let c4 = verdict(
        s.max_abs_energy_balance < 1e-9 && s.max_rel_energy_change < 1e-8,
        format!(
            "energy balance residual {:.2e} (< 1e-9), relative energy change {:.2e} (< 1e-8)",
            s.max_abs_energy_balance, s.max_rel_energy_change
        ),
    );
    vec![c1, c2, c3, c4]
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (-5.0, 5.0);
    let basis = VelocityBasis::new(a, b, 32).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut worst_im: f64 = 0.0;
    for _ in 0..100 {
        let c = random_coefficients(&mut rng, 32, 8);
        let field = random_field(&mut rng, 8);
        let work = field_work(&basis, &c, &field);
        let lib = [work.acceleration, work.boundary_square, work.boundary_total()];
        let oracle = boundary_square_oracle(a, b, &c, &field);
        let scale = lib.iter().map(|z| z.norm()).fold(oracle.norm(), f64::max);
        for q in lib {
            worst_rel = worst_rel.max((q.re - oracle.re).abs() / scale);
            worst_im = worst_im.max(q.im.abs() / scale.max(1.0));
        }
        for (p, q) in lib.iter().zip(lib.iter().skip(1)) {
            worst_rel = worst_rel.max((p - q).norm() / scale);
        }
    }
    verdict(
        worst_rel < 1e-11 && worst_im < 1e-11,
        format!("100 states: worst relative disagreement {worst_rel:.2e}, worst imaginary part {worst_im:.2e}"),
    )
}

/// `[E ⋆ δ_v[f²]]_0` from boundary values computed by direct summation.
fn boundary_square_oracle(a: f64, b: f64, c: &Coefficients, field: &Modes) -> Complex64 {
    let nf = c.n_fourier() as i64;
    let hi: Vec<Complex64> = (-nf..=nf).map(|k| column_at(a, b, c, k, b).0).collect();
    let lo: Vec<Complex64> = (-nf..=nf).map(|k| column_at(a, b, c, k, a).0).collect();
    let mut out = Complex64::new(0.0, 0.0);
    for k in -nf..=nf {
        // [f²]_{-k} by direct convolution
        let mut sq = Complex64::new(0.0, 0.0);
        for p in -nf..=nf {
            let q = -k - p;
            if q.abs() <= nf {
                let (ip, iq) = ((p + nf) as usize, (q + nf) as usize);
                sq += hi[ip] * hi[iq] - lo[ip] * lo[iq];
            }
        }
        out += field.get(k) * sq / (b - a);
    }
    out
}

fn two_stream(overrides: &[&str]) -> RunReport {
    let mut o = vec!["n_legendre=64", "n_modes_x=17", "dt=0.02"];
    o.extend_from_slice(overrides);
    preset_run("two_stream", &o)
}

fn criterion_6() -> Verdict {
    let base = ["t_final=4", "gamma=0.5", "penalty_mode=all_modes"];
    let free = two_stream(&[&base[..], &["nu=0"]].concat());
    let damped = two_stream(&[&base[..], &["nu=1"]].concat());
    let change = free.stats.conservation.max_abs_l2_step_change;
    let increase = damped.stats.conservation.max_l2_step_increase;
    verdict(
        free.stats.solver.steps == 200 && damped.stats.solver.steps == 200 && change < 1e-9 && increase <= 1e-15,
        format!("200 steps: nu=0 max |ΔL²/L²| per step {change:.2e} (< 1e-9); nu=1 max step increase {increase:.2e}"),
    )
}

fn criterion_7() -> Verdict {
    let base = ["t_final=60", "penalty_mode=all_modes"];
    let mut parts = Vec::new();
    let mut pass = true;
    for nu in ["nu=0", "nu=1"] {
        let r = two_stream(&[&base[..], &["gamma=0", nu]].concat());
        let growth = r.stats.conservation.max_l2_ratio;
        let failed = matches!(r.status, RunStatus::Rejected { .. });
        pass &= failed || growth > 1.1;
        parts.push(match &r.status {
            RunStatus::Rejected { time, .. } => format!("gamma=0 {nu}: rejected at t={time:.2} (L² ratio {growth:.1e})"),
            RunStatus::Completed => format!("gamma=0 {nu}: completed, L² ratio {growth:.3}"),
        });
    }
    let r = two_stream(&[&base[..], &["gamma=0.5", "nu=1"]].concat());
    let increase = r.stats.conservation.max_l2_step_increase;
    pass &= r.status == RunStatus::Completed && increase <= 1e-15;
    parts.push(format!(
        "gamma=0.5 nu=1: {:?}, max step increase {increase:.1e}",
        r.stats.status
    ));
    verdict(pass, parts.join("; "))
}

fn criterion_8() -> Verdict {
    let period = |dt: &str| {
        let r = preset_run("ion_acoustic", &["n_modes_x=17", dt, "nu=0.5", "t_final=450"]);
        fit_period(&r.field_series(0), (50.0, 450.0), 50.0)
    };
    match (period("dt=1"), period("dt=0.05")) {
        (Ok(coarse), Ok(fine)) => {
            let spread = (coarse - fine).abs() / fine;
            verdict(
                (coarse - 197.0).abs() <= 0.05 * 197.0 && spread <= 0.02,
                format!("period dt=1 {coarse:.2}, dt=0.05 {fine:.2} (target 197 ± 5%, agreement {:.2}% ≤ 2%)", 100.0 * spread),
            )
        }
        (a, b) => verdict(false, format!("fit failed: {a:?} / {b:?}")),
    }
}

fn criterion_9() -> Verdict {
    let mut worst: f64 = 0.0;
    for (a, b) in [(-5.0, 5.0), (-3.0, 7.0)] {
        let n_max = 50;
        let basis = VelocityBasis::new(a, b, n_max + 3).unwrap();
        let (nodes, weights) = gauss(a, b, n_max + 40);
        let w = b - a;
        let vs = a.abs().max(b.abs());
        let table: Vec<Vec<(f64, f64)>> = nodes.iter().map(|&v| (0..n_max + 3).map(|n| phi(a, b, n, v)).collect()).collect();
        let project = |n: usize, m: usize, g: &dyn Fn(f64, f64, f64) -> f64| -> f64 {
            nodes
                .iter()
                .zip(&weights)
                .zip(&table)
                .map(|((&v, &wt), row)| wt * g(v, row[n].0, row[n].1) * row[m].0)
                .sum::<f64>()
                / w
        };
        for n in 0..n_max {
            let r1 = basis.recursion_vphi(n);
            let r2 = basis.recursion_v2phi(n).0;
            let moments = basis.moment_integrals(n);
            let q = |k: i32| -> f64 {
                nodes
                    .iter()
                    .zip(&weights)
                    .zip(&table)
                    .map(|((&v, &wt), row)| wt * v.powi(k) * row[n].0)
                    .sum()
            };
            for (got, expected) in [(q(0), moments.zeroth), (q(1), moments.first), (q(2), moments.second)] {
                worst = worst.max(rel_err(got, expected, w * vs * vs));
            }
            for m in 0..n_max {
                let v1 = project(n, m, &|v, p, _| v * p);
                let e1 = match m {
                    _ if m == n + 1 => r1.plus,
                    _ if m + 1 == n => r1.minus,
                    _ if m == n => r1.center,
                    _ => 0.0,
                };
                let v2 = project(n, m, &|v, p, _| v * v * p);
                let off = m as i64 - n as i64;
                let e2 = if off.abs() <= 2 { r2[(2 - off) as usize] } else { 0.0 };
                let d = project(n, m, &|_, _, dp| dp);
                let closed = if m < n && (n - m) % 2 == 1 {
                    n as f64 * ((2 * m + 1) as f64 / (2 * n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                worst = worst
                    .max(rel_err(v1, e1, vs))
                    .max(rel_err(v2, e2, vs * vs))
                    .max(rel_err(d, basis.sigma_deriv(n, m), 2.0 * (2 * n_max) as f64 / w))
                    .max(rel_err(basis.sigma(n) * basis.sigma_deriv(n, m), closed, 1.0));
            }
        }
    }
    verdict(worst < 1e-11, format!("all n, m < 50 on two intervals: worst relative error {worst:.2e}"))
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (a, b, length) = (-3.0, 7.0, 4.0);
    let (n_l, n_f) = (16, 4);
    let n_x = 4 * n_f + 2;
    let (nodes, weights) = gauss(a, b, n_l + 4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c = random_coefficients(&mut rng, n_l, n_f);
        let mut quad = 0.0;
        for j in 0..n_x {
            let x = j as f64 * length / n_x as f64;
            for (&v, &wt) in nodes.iter().zip(&weights) {
                quad += wt * (length / n_x as f64) * f_at(a, b, &c, length, x, v).re.powi(2);
            }
        }
        worst = worst.max(rel_err(quad, (b - a) * length * c.norm_sq(), 0.0));
    }
    verdict(worst < 1e-10, format!("20 states: worst relative error {worst:.2e}"))
}

fn criterion_11() -> Verdict {
    let domain = DomainConfig {
        length: 2.0 * PI,
        v_min: -4.0,
        v_max: 4.0,
        n_legendre: 32,
        n_fourier: 4,
        epsilon0: 1.0,
    };
    let neutral = Species {
        name: "n".into(),
        charge: 0.0,
        mass: 1.0,
        nu: 0.0,
        gamma: 0.5,
        penalty_mode: PenaltyMode::SkipFirstThree,
        velocity_bounds: None,
    };
    let model = Model::new(domain, vec![neutral], Background::None).unwrap();
    let profile = InitialProfile::Maxwellian {
        thermal_speed: 0.8,
        drift: 0.5,
        density: 1.0,
        amplitude: 0.3,
        mode: 1,
    };
    let c = legendre_vlasov::spectral::project_initial(model.basis(0), 4, "n", &profile, 1e-3).unwrap();
    let initial = SpectralState::new(vec![c]);
    let advance = |dt: f64| {
        let mut cfg = SolverConfig::new(dt, 1.0);
        cfg.newton_abs_tol = 1e-14;
        cfg.gmres_rel_tol = 1e-10;
        run(&model, &cfg, initial.clone(), &mut NoObserver).unwrap().state
    };
    let reference = advance(0.025 / 64.0);
    let errors: Vec<(f64, f64)> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            let s = advance(dt);
            let e = s.species[0]
                .data()
                .iter()
                .zip(reference.species[0].data())
                .map(|(p, q)| (p - q).norm_sqr())
                .sum::<f64>()
                .sqrt();
            (dt, e)
        })
        .collect();
    let slope = log_log_slope(&errors);
    verdict(
        (slope - 2.0).abs() <= 0.15,
        format!(
            "slope {slope:.3} (2.0 ± 0.15); errors {}",
            errors.iter().map(|(dt, e)| format!("{dt}: {e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, Verdict)> = std::thread::scope(|scope| {
        let landau_runs = scope.spawn(|| {
            let (a, b) = std::thread::scope(|inner| {
                let on = inner.spawn(|| landau("nu=1"));
                let off = inner.spawn(|| landau("nu=0"));
                (on.join().unwrap(), off.join().unwrap())
            });
            criteria_1_to_4(&a, &b)
        });
        let singles: Vec<(usize, std::thread::ScopedJoinHandle<'_, Verdict>)> = vec![
            (5, scope.spawn(criterion_5)),
            (6, scope.spawn(criterion_6)),
            (7, scope.spawn(criterion_7)),
            (8, scope.spawn(criterion_8)),
            (9, scope.spawn(criterion_9)),
            (10, scope.spawn(criterion_10)),
            (11, scope.spawn(criterion_11)),
        ];
        let mut out: Vec<(usize, Verdict)> = landau_runs.join().unwrap().into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect();
        out.extend(singles.into_iter().map(|(n, h)| (n, h.join().unwrap())));
        out
    });
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, v) in &results {
        println!("criterion {n:>2}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1} s)",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
