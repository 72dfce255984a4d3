//! Acceptance suite: one test per criterion, each printing a pass line
//! with the measured quantities (run with `-- --nocapture` to see them).
//!
//! Criteria 1-10 exercise the library directly at the stated tolerances;
//! criterion 11 replays representative CLI invocations across worker
//! thread counts and compares the reports byte for byte (modulo the
//! wall-time field).

use std::f64::consts::LN_2;
use std::time::Instant;

use num_complex::Complex64;

use ruelle::complexdyn::{
    complex_periodic_pressure, complex_preimage_pressure, ComplexPotential, ComplexQuadratic,
};
use ruelle::ldp::{
    deviation_decay, legendre_rate, project_level2, scgf, solve_equilibrium, weakstar_check,
    Equilibrium, Level2Source, ScgfMethod, ScgfOptions,
};
use ruelle::maps::{doubling, logistic, tent};
use ruelle::numerics::linspace;
use ruelle::periodic::periodic_points;
use ruelle::potentials::{Potential, TrigTerm};
use ruelle::pressure::{cross_validate, estimate, Method, Schedule};
use ruelle::transfer::{
    build_discretization, conformal_residual, default_growth_grid, duality_residual,
    leading_eigen, normalized_growth_check,
};

const SEED: u64 = 20260809;

fn bc_phi() -> Potential {
    Potential::branch_constant(vec![0.2, -0.3])
}

fn bc_pressure() -> f64 {
    (0.2_f64.exp() + (-0.3_f64).exp()).ln()
}

fn h2(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

fn pass(line: &str) {
    println!("ACCEPTANCE {line}");
}

#[test]
fn criterion_01_exact_full_shift_preimage_pressure() {
    let started = Instant::now();
    let m = doubling();
    let phi = Potential::constant(0.0);
    let sched = Schedule { preimage_n: (1, 16), ..Default::default() };
    let est = estimate(&m, &phi, Method::PreimageSum, &sched).unwrap();
    let mut worst = 0.0_f64;
    for &(n, v) in &est.iterates {
        assert!((n as usize) <= 16);
        worst = worst.max((v - LN_2).abs());
    }
    assert!(worst <= 1e-12, "worst iterate error {worst}");
    assert!((est.extrapolated - LN_2).abs() <= 1e-12);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(&format!(
        "01 preimage iterates equal log 2 to {worst:.2e} for n <= 16 in {elapsed:?} .. PASS"
    ));
}

#[test]
fn criterion_02_three_way_agreement() {
    let started = Instant::now();
    let m = doubling();
    let phi = bc_phi();
    let sched = Schedule {
        preimage_n: (4, 14),
        periodic_n: (2, 12),
        spectral_m: vec![256, 512, 1024],
        ..Default::default()
    };
    let mut errs = Vec::new();
    for method in [Method::PreimageSum, Method::PeriodicSum, Method::Spectral] {
        let est = estimate(&m, &phi, method, &sched).unwrap();
        let err = (est.extrapolated - bc_pressure()).abs();
        assert!(err <= 1e-3, "{method:?} error {err}");
        errs.push(err);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    pass(&format!(
        "02 preimage/periodic/spectral within (({:.1e}, {:.1e}, {:.1e})) of log(e^0.2+e^-0.3) in {elapsed:?} .. PASS",
        errs[0], errs[1], errs[2]
    ));
}

#[test]
fn criterion_03_periodic_counting() {
    let m = doubling();
    for n in 1..=12 {
        let set = periodic_points(&m, n).unwrap();
        assert_eq!(set.points.len(), (1usize << n) - 1, "n = {n}");
    }
    pass("03 |Per_n| = 2^n - 1 exactly for n <= 12 .. PASS");
}

#[test]
fn criterion_04_scgf_identity() {
    let m = doubling();
    let phi = Potential::constant(0.0);
    let psi = Potential::branch_constant(vec![0.0, 1.0]);
    let t_grid = linspace(-2.0, 2.0, 41);
    let opts = ScgfOptions { seed: SEED, mc_n: 30, mc_trials: 10_000, ..Default::default() };
    let closed = |t: f64| ((1.0 + t.exp()) / 2.0).ln();

    let pd = scgf(&m, &phi, &psi, &t_grid, ScgfMethod::PressureDifference, &opts, None).unwrap();
    let pd_err = t_grid
        .iter()
        .zip(&pd.lambda)
        .map(|(t, l)| (l - closed(*t)).abs())
        .fold(0.0_f64, f64::max);
    assert!(pd_err <= 1e-3, "pressure-difference error {pd_err}");

    let (disc, spectral) = solve_equilibrium(&m, &phi, 1024).unwrap();
    let eq = Equilibrium { disc: &disc, spectral: &spectral };
    let mc = scgf(&m, &phi, &psi, &t_grid, ScgfMethod::MonteCarlo, &opts, Some(&eq)).unwrap();
    let mc_err = t_grid
        .iter()
        .zip(&mc.lambda)
        .map(|(t, l)| (l - closed(*t)).abs())
        .fold(0.0_f64, f64::max);
    assert!(mc_err <= 5e-2, "monte-carlo error {mc_err}");
    pass(&format!(
        "04 SCGF matches log((1+e^t)/2): pressure-difference {pd_err:.2e} <= 1e-3, monte-carlo {mc_err:.2e} <= 5e-2 .. PASS"
    ));
}

#[test]
fn criterion_05_rate_function_and_deviation_decay() {
    let m = doubling();
    let phi = Potential::constant(0.0);
    let psi = Potential::branch_constant(vec![0.0, 1.0]);
    let opts = ScgfOptions { seed: SEED, ..Default::default() };
    let t_grid = linspace(-4.0, 4.0, 81);
    let curve =
        scgf(&m, &phi, &psi, &t_grid, ScgfMethod::PressureDifference, &opts, None).unwrap();
    let s_grid = linspace(0.05, 0.95, 91);
    let profile = legendre_rate(&curve, &s_grid).unwrap();
    let rate_err = s_grid
        .iter()
        .zip(&profile.values)
        .map(|(s, v)| (v - (s * s.ln() + (1.0 - s) * (1.0 - s).ln() + LN_2)).abs())
        .fold(0.0_f64, f64::max);
    assert!(rate_err <= 1e-3, "rate profile error {rate_err}");

    let source = Level2Source::Preimages { x0: 1.0 / 3.0 };
    let decay = deviation_decay(&m, &phi, source, &psi, 0.7, (20, 200), None).unwrap();
    assert!(decay.used_exact_path);
    let target = -(LN_2 - h2(0.7));
    let slope_err = (decay.slope - target).abs();
    assert!(slope_err <= 1e-2, "slope {} vs {target}", decay.slope);

    let flat = deviation_decay(&m, &phi, source, &psi, 0.5, (20, 200), None).unwrap();
    assert!(flat.slope.abs() <= 1e-3, "flat slope {}", flat.slope);
    pass(&format!(
        "05 rate profile within {rate_err:.2e}; decay slope at s0=0.7 within {slope_err:.2e} of -0.082288; |slope| at s0=0.5 = {:.1e} .. PASS",
        flat.slope.abs()
    ));
}

#[test]
fn criterion_06_conformal_and_duality_identities() {
    let m = doubling();
    let phi = bc_phi();
    let disc = build_discretization(&m, &phi, 1024).unwrap();
    let spectral = leading_eigen(&disc).unwrap();
    let cells: Vec<usize> = (0..16).map(|k| 13 + k * 61).collect();
    let conformal = conformal_residual(&m, &phi, &disc, &spectral, &cells).unwrap();
    assert!(conformal <= 1e-3, "conformal residual {conformal}");
    let sine = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
    let cosine = |x: f64| (std::f64::consts::PI * x).cos();
    let ones = |_: f64| 1.0;
    let duality = duality_residual(&disc, &spectral, &[&ones, &sine, &cosine]);
    assert!(duality <= 1e-4, "duality residual {duality}");
    pass(&format!(
        "06 conformal residual {conformal:.2e} <= 1e-3, duality residual {duality:.2e} <= 1e-4 at m = 1024 .. PASS"
    ));
}

#[test]
fn criterion_07_normalized_operator_growth() {
    let m = doubling();
    let phi = Potential::affine(1.0, 0.0);
    let consensus = ruelle::ldp::pressure_consensus(
        &m,
        &phi,
        &[Method::PreimageSum, Method::PeriodicSum, Method::Spectral],
        &Schedule::default(),
    )
    .unwrap();
    let grid = default_growth_grid(&m);
    let growth = normalized_growth_check(&m, &phi, consensus, 12, &grid).unwrap();
    let last = growth.last().unwrap();
    assert_eq!(last.n, 12);
    assert!(last.a_n.abs() <= 5e-2, "a_12 = {}", last.a_n);
    assert!(last.b_n.abs() <= 5e-2, "b_12 = {}", last.b_n);
    pass(&format!(
        "07 |a_12| = {:.3e}, |b_12| = {:.3e} <= 5e-2 with consensus pressure {consensus:.6} .. PASS",
        last.a_n.abs(),
        last.b_n.abs()
    ));
}

#[test]
fn criterion_08_weakstar_convergence() {
    let m = doubling().with_periodic_cap(20);
    let phi = bc_phi();
    let psi = Potential::branch_constant(vec![1.0, 0.0]);
    let p_star = 0.2_f64.exp() / (0.2_f64.exp() + (-0.3_f64).exp());
    let (disc, spectral) = solve_equilibrium(&m, &phi, 1024).unwrap();
    let eq = Equilibrium { disc: &disc, spectral: &spectral };
    let sources = [
        Level2Source::Preimages { x0: 1.0 / 3.0 },
        Level2Source::Periodic,
        Level2Source::Birkhoff { trials: 10_000, seed: SEED, burn_in: 100 },
    ];
    let mut worst_at_20 = 0.0_f64;
    for source in sources {
        let mut projections = Vec::new();
        for n in [5usize, 10, 15, 20] {
            projections.push(project_level2(&m, &phi, source, &[&psi], n, Some(&eq)).unwrap());
        }
        let report = weakstar_check(&projections, &[p_star]);
        let devs: Vec<f64> = report.rows.iter().map(|r| r.deviations[0]).collect();
        assert!(
            report.max_deviation_at_largest_n <= 2e-2,
            "{}: deviation at n=20 {}",
            source.label(),
            report.max_deviation_at_largest_n
        );
        for w in devs.windows(2) {
            assert!(w[1] <= w[0] + 2e-3, "{}: {devs:?} not decreasing", source.label());
        }
        worst_at_20 = worst_at_20.max(report.max_deviation_at_largest_n);
    }
    pass(&format!(
        "08 weighted means at n = 20 within {worst_at_20:.2e} <= 2e-2 of the equilibrium mean for all three sources, decreasing in n .. PASS"
    ));
}

#[test]
fn criterion_09_conjugacy_invariance() {
    // h(x) = sin^2(pi x/2) conjugates the tent map to the full quadratic;
    // the identity observable on the quadratic side pulls back to
    // (1 - cos(pi x))/2, and x0 = 1/4 = h(1/3)
    let t = tent();
    let l = logistic();
    let psi_log = Potential::affine(1.0, 0.0);
    let psi_tent =
        Potential::trig(0.5, vec![TrigTerm { harmonic: 1, cos_coeff: -0.5, sin_coeff: 0.0 }]);
    let methods = [Method::PreimageSum, Method::PeriodicSum];
    let sched_t = Schedule {
        preimage_n: (4, 14),
        periodic_n: (2, 10),
        x0: Some(1.0 / 3.0),
        ..Default::default()
    };
    let sched_l = Schedule {
        preimage_n: (4, 14),
        periodic_n: (2, 10),
        x0: Some(0.25),
        ..Default::default()
    };
    let rt = cross_validate(&t, &psi_tent, &methods, &sched_t, 5e-3).unwrap();
    let rl = cross_validate(&l, &psi_log, &methods, &sched_l, 5e-3).unwrap();
    let gap = (rt.consensus - rl.consensus).abs();
    assert!(gap <= 2e-3, "tent {} vs quadratic {}", rt.consensus, rl.consensus);
    pass(&format!(
        "09 conjugate consensus pressures agree within {gap:.2e} <= 2e-3 ({:.6} vs {:.6}) .. PASS",
        rt.consensus, rl.consensus
    ));
}

#[test]
fn criterion_10_complex_quadratics() {
    let started = Instant::now();
    let zero = ComplexPotential::Zero;

    let circle = ComplexQuadratic::new(Complex64::new(0.0, 0.0));
    let pre = complex_preimage_pressure(&circle, &zero, Complex64::new(1.1, 0.37), (4, 16))
        .unwrap();
    let per = complex_periodic_pressure(&circle, &zero, (3, 8)).unwrap();
    let pre_err = (pre.extrapolated - LN_2).abs();
    let per_err = (per.extrapolated - LN_2).abs();
    assert!(pre_err <= 1e-3, "c=0 preimage error {pre_err}");
    assert!(per_err <= 1e-3, "c=0 periodic error {per_err}");

    let basilica = ComplexQuadratic::new(Complex64::new(-1.0, 0.0));
    let pre_b = complex_preimage_pressure(&basilica, &zero, Complex64::new(1.2, 0.3), (4, 18))
        .unwrap();
    let per_b = complex_periodic_pressure(&basilica, &zero, (3, 8)).unwrap();
    let pre_b_err = (pre_b.extrapolated - LN_2).abs();
    let per_b_err = (per_b.extrapolated - LN_2).abs();
    assert!(pre_b_err <= 2e-2, "c=-1 preimage error {pre_b_err}");
    assert!(per_b_err <= 2e-2, "c=-1 periodic error {per_b_err}");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    pass(&format!(
        "10 c=0 within ({pre_err:.1e}, {per_err:.1e}) <= 1e-3; c=-1 within ({pre_b_err:.1e}, {per_b_err:.1e}) <= 2e-2 in {elapsed:?} .. PASS"
    ));
}

#[test]
fn criterion_11_thread_count_determinism() {
    // replay a representative command per criterion through the CLI binary
    // at 1, 2, and 8 worker threads; reports must agree byte for byte
    // after dropping the wall-time line
    let exe = env!("CARGO_BIN_EXE_ruelle");
    let commands: Vec<Vec<&str>> = vec![
        // criterion 1
        vec!["pressure", "--map", "doubling", "--potential", "const:0", "--method", "preimage", "--n-min", "1", "--n-max", "16"],
        // criterion 2
        vec!["pressure", "--map", "doubling", "--potential", "branch:0.2,-0.3", "--n-max", "14"],
        // criterion 3
        vec!["periodic", "--map", "doubling", "--n-max", "12"],
        // criterion 4
        vec!["scgf", "--map", "doubling", "--potential", "const:0", "--observable", "branch:0,1", "--t-count", "21", "--mc-trials", "10000"],
        // criterion 5
        vec!["rate", "--map", "doubling", "--potential", "const:0", "--observable", "branch:0,1"],
        vec!["ldp-check", "--map", "doubling", "--potential", "const:0", "--observable", "branch:0,1", "--s0", "0.7", "--n-max", "200", "--sources", "preimages,periodic", "--weakstar-n", "5,10"],
        // criterion 6
        vec!["conformal-check", "--map", "doubling", "--potential", "branch:0.2,-0.3", "--m", "1024"],
        // criterion 7
        vec!["ulam", "--map", "doubling", "--potential", "affine:1,0", "--m", "1024", "--growth-n-max", "12"],
        // criterion 8 (birkhoff source included)
        vec!["ldp-check", "--map", "doubling", "--potential", "branch:0.2,-0.3", "--observable", "branch:1,0", "--s0", "0.8", "--n-max", "60", "--weakstar-n", "5,10,15,20"],
        // criterion 9
        vec!["pressure", "--map", "tent", "--potential", "cosine:0.5,-0.5,1", "--method", "preimage,periodic", "--x0", "0.3333333333333333"],
        vec!["pressure", "--map", "logistic", "--potential", "affine:1,0", "--method", "preimage,periodic", "--x0", "0.25"],
        // criterion 10
        vec!["complex-pressure", "--c", "-1,0", "--n-max", "14", "--periodic-n-max", "7", "--samples", "2000"],
        // shrinking interface
        vec!["shrinking", "--map", "doubling", "--n-max", "14"],
        // hyperbolicity interface
        vec!["hyperbolic-check", "--map", "doubling", "--potential", "branch:0.2,-0.3"],
    ];
    let strip = |s: &str| -> String {
        s.lines().filter(|l| !l.contains("wall_time_ms")).collect::<Vec<_>>().join("\n")
    };
    for command in &commands {
        let mut outputs = Vec::new();
        for threads in ["1", "2", "8"] {
            let out = std::process::Command::new(exe)
                .args(command)
                .args(["--threads", threads, "--seed", "20260809"])
                .output()
                .expect("spawn ruelle");
            assert!(
                out.status.success(),
                "{command:?} --threads {threads}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            outputs.push(strip(&String::from_utf8(out.stdout).unwrap()));
        }
        assert_eq!(outputs[0], outputs[1], "{command:?}: 1 vs 2 threads");
        assert_eq!(outputs[0], outputs[2], "{command:?}: 1 vs 8 threads");
    }
    pass(&format!(
        "11 {} reports byte-identical across 1/2/8 worker threads (modulo wall time) .. PASS",
        commands.len()
    ));
}
