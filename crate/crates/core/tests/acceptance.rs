//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the report is always printed.

use std::fs;
use std::path::Path;
use std::time::Instant;

use dphase::cli::{load_plan, run_plan};
use dphase::functionals::{mu_measure, nonlocal_tail, vmo_modulus, FunctionalOptions, VmoOptions};
use dphase::model::*;
use dphase::operators::{AssemblyOptions, WeakFormAssembly};
use dphase::quadrature::{exterior_radial_integral, pair_integral, pv_point_eval, PairOptions, PvOptions};
use dphase::regularity::*;
use dphase::solver::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// pinned tolerances
const EXPONENT_TOL: f64 = 1e-14;
const PAIR_EXACT_TOL: f64 = 1e-6;
const PAIR_ORACLE_REL: f64 = 1e-4;
const RADIAL_TOL: f64 = 1e-6;
const GETOOR_MAX_ERR: f64 = 0.05;
const UNIQUENESS_FACTOR: f64 = 10.0;
const COMPARISON_SLACK: f64 = 1e-9;
const HOLDER_SLACK: f64 = 0.1;
const STABILITY_RATIO: f64 = 2.0;
const LHS_GROWTH: f64 = 1.1;
const MU_FIT_TOL: f64 = 1e-2;
const RANDOM_INSTANCES: usize = 100;
const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn zero(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |_| 0.0, Exterior::constant(0.0))
}

fn constant(grid: Grid, c: f64) -> GridFunction {
    GridFunction::from_fn(grid, move |_| c, Exterior::constant(0.0))
}

fn sup_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn double_phase_kernel(low: f64, high: f64) -> KernelPair {
    KernelSpec {
        a: ACoef::Checkerboard { side: 0.25, low, high },
        b: BCoef::Smooth { base: 1.0, amplitude: 0.5, frequency: 2.0 },
    }
    .build()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        let good = (got - want).abs() <= EXPONENT_TOL * want.abs().max(1.0);
        if !good {
            notes.push(format!("{name}: {got} != {want}"));
        }
        ok &= good;
    };
    let d = validate_spec(&ProblemSpec::new(2, 2.0, 2.0, 0.5, 0.5)).unwrap();
    check("Theta(2,2,2,.5,.5)", d.theta, 1.0);
    check("p_star(sp<N)", d.p_star, 4.0 / 3.0);
    check("A(sp<N)", d.frak_a, 0.0);
    check("p_sob(N>ps)", d.p_sob, 4.0);
    let d = validate_spec(&ProblemSpec::new(2, 2.0, 3.0, 0.8, 0.5)).unwrap();
    check("Theta(2,2,3,.8,.5)", d.theta, 0.75);
    // sp >= N: p_star = 1, A = min{delta0, 1/p}/2, p*_s is the sentinel
    let spec = ProblemSpec::new(1, 3.0, 3.0, 0.5, 0.5).with_delta0(0.1);
    let d = validate_spec(&spec).unwrap();
    check("p_star(sp>=N)", d.p_star, 1.0);
    check("A(sp>=N)", d.frak_a, 0.05);
    check("p_sob(sentinel)", d.p_sob, DEFAULT_P_SOB_SENTINEL);
    // finite gamma enters through N/gamma
    let d = validate_spec(&ProblemSpec::new(1, 2.0, 2.0, 0.4, 0.45).with_gamma(4.0)).unwrap();
    check("Theta(gamma=4)", d.theta, 0.8 - 0.25);
    let d = validate_spec(&ProblemSpec::new(1, 2.0, 2.0, 0.4, 0.45)).unwrap();
    check("Theta(gamma=inf)", d.theta, 0.8);
    outcome(ok, if notes.is_empty() { "9 exponent values exact".into() } else { notes.join("; ") })
}

/// Composite Simpson on `[0,1]^2` of `((sin x - sin y)/(x - y))^2`, written
/// through the smooth form `(2 cos((x+y)/2) sinc((x-y)/2) / 2)^2`.
fn sine_oracle() -> f64 {
    let n = 600;
    let h = 1.0 / n as f64;
    let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let g = |x: f64, y: f64| {
        let d = 0.5 * (x - y);
        let sinc = if d.abs() < 1e-8 { 1.0 - d * d / 6.0 } else { d.sin() / d };
        let v = ((x + y) * 0.5).cos() * sinc;
        v * v
    };
    let mut acc = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            acc += w(i) * w(j) * g(i as f64 * h, j as f64 * h);
        }
    }
    acc * h * h / 9.0
}

fn criterion_2() -> Outcome {
    let unit = Region::ball([0.5, 0.0], 0.5, 1);
    let o = PairOptions::default();
    // sigma = 1 with integrand |x - y| means F = |x - y|^3
    let a = pair_integral(|x, y| (x[0] - y[0]).abs().powi(3), &unit, &unit, 1.0, &o).unwrap();
    let b = pair_integral(|x, y| (x[0].sin() - y[0].sin()).powi(2), &unit, &unit, 1.0, &o).unwrap();
    let oracle = sine_oracle();
    let e1 = exterior_radial_integral(&[0.0, 0.0], 1.0, 1.0, 0.0, 2.0, 1).unwrap();
    let e2 = exterior_radial_integral(&[0.0, 0.0], 2.0, 1.0, 0.0, 2.0, 1).unwrap();
    let pass = (a - 1.0 / 3.0).abs() <= PAIR_EXACT_TOL
        && (b - oracle).abs() <= PAIR_ORACLE_REL * oracle
        && (e1 - 2.0).abs() <= RADIAL_TOL
        && (e2 - 1.0).abs() <= RADIAL_TOL;
    outcome(
        pass,
        format!(
            "1/3 err {:.1e}, sine rel err {:.1e}, radial {:.8} {:.8}",
            (a - 1.0 / 3.0).abs(),
            (b - oracle).abs() / oracle,
            e1,
            e2
        ),
    )
}

fn getoor_error(cells: usize) -> f64 {
    let grid = Grid::new(1, cells, 1.0).unwrap();
    let spec = ProblemSpec::new(1, 2.0, 2.0, 0.5, 0.5);
    let k = KernelPair::constant(1.0);
    let exact = GridFunction::from_fn(grid, getoor_profile, Exterior::constant(0.0));
    let c = pv_point_eval(&exact, &k, &spec, cells / 2, &PvOptions::default()).unwrap();
    let f = constant(grid, c);
    let dom = Region::ball([0.0, 0.0], 1.0, 1);
    let r = solve_dirichlet(&spec, &k, &dom, grid, &Exterior::constant(0.0), &f, &SolveConfig::default(), &AssemblyOptions::default())
        .unwrap();
    sup_diff(r.solution(), &exact)
}

fn criterion_3() -> Outcome {
    let errs: Vec<f64> = [128, 256, 512].iter().map(|&c| getoor_error(c)).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        decreasing && errs[2] <= GETOOR_MAX_ERR,
        format!("L_inf errors h=1/64,1/128,1/256: {:.3e} {:.3e} {:.3e}", errs[0], errs[1], errs[2]),
    )
}

fn criterion_4() -> Outcome {
    let cfg = SolveConfig::default();
    let ao = AssemblyOptions::default();
    let grid = Grid::new(1, 128, 1.0).unwrap();
    let dom = Region::ball([0.0, 0.0], 0.75, 1);
    let spec = ProblemSpec::new(1, 2.5, 3.0, 0.6, 0.4);
    let k = double_phase_kernel(0.8, 1.2);
    let mut notes = Vec::new();
    let mut ok = true;

    // zero and constant data
    for c in [0.0, 0.7] {
        let r = solve_dirichlet(&spec, &k, &dom, grid, &Exterior::constant(c), &zero(grid), &cfg, &ao).unwrap();
        let err = r.solution().values.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
        let good = err <= cfg.inner_tol && r.final_residual <= cfg.inner_tol;
        ok &= good;
        notes.push(format!("const {c}: err {err:.1e}"));
    }

    // two initializations
    let g = ExteriorSpec::Sine { amplitude: 0.8, frequency: 2.0, phase: 0.3 }.build();
    let f = constant(grid, 0.5);
    let a = solve_dirichlet(&spec, &k, &dom, grid, &g, &f, &cfg, &ao).unwrap();
    let cold = SolveConfig { harmonic_init: false, ..cfg.clone() };
    let b = solve_dirichlet(&spec, &k, &dom, grid, &g, &f, &cold, &ao).unwrap();
    let gap = sup_diff(a.solution(), b.solution());
    ok &= gap <= UNIQUENESS_FACTOR * cfg.inner_tol;
    notes.push(format!("uniqueness gap {gap:.1e}"));

    // energy along accepted steps
    let mut steps = 0;
    let mut merit = 0;
    for r in [&a, &b] {
        for s in &r.convergence_history {
            if let Some(de) = s.energy_change {
                if s.residual_merit {
                    merit += 1;
                } else {
                    steps += 1;
                    ok &= de < 0.0;
                }
            }
        }
    }
    // a frozen solve from an arbitrary start records a full descent path
    let mut asm = WeakFormAssembly::new(&spec, &k, &dom, grid, &g, &ao).unwrap();
    let start = asm.constrained(|x| (5.0 * x[0]).cos());
    asm.freeze(&start).unwrap();
    let fr = solve_frozen(&asm, &f, Some(&start), &cfg).unwrap();
    for s in &fr.convergence_history {
        if let (Some(de), false) = (s.energy_change, s.residual_merit) {
            steps += 1;
            ok &= de < 0.0;
        }
    }
    notes.push(format!("{steps} energy-decreasing steps, {merit} round-off steps"));

    // comparison principle: g1 <= g2 and f1 <= f2
    let pairs: [(ExteriorSpec, f64, ExteriorSpec, f64); 5] = [
        (ExteriorSpec::Constant { value: 0.0 }, 0.0, ExteriorSpec::Constant { value: 0.5 }, 0.0),
        (ExteriorSpec::Constant { value: 0.0 }, 0.0, ExteriorSpec::Constant { value: 0.0 }, 1.0),
        (ExteriorSpec::Constant { value: -0.5 }, -1.0, ExteriorSpec::Constant { value: 0.2 }, 0.5),
        (
            ExteriorSpec::Sine { amplitude: 0.5, frequency: 1.0, phase: 0.0 },
            0.0,
            ExteriorSpec::Constant { value: 0.6 },
            0.0,
        ),
        (
            ExteriorSpec::Constant { value: -0.6 },
            0.3,
            ExteriorSpec::Sine { amplitude: 0.5, frequency: 3.0, phase: 1.0 },
            0.3,
        ),
    ];
    let mut worst = f64::NEG_INFINITY;
    for (g1, f1, g2, f2) in &pairs {
        let u1 = solve_dirichlet(&spec, &k, &dom, grid, &g1.build(), &constant(grid, *f1), &cfg, &ao).unwrap();
        let u2 = solve_dirichlet(&spec, &k, &dom, grid, &g2.build(), &constant(grid, *f2), &cfg, &ao).unwrap();
        let d = u1.solution().values.iter().zip(&u2.solution().values).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(d);
    }
    ok &= worst <= COMPARISON_SLACK;
    notes.push(format!("comparison max(u1-u2) {worst:.1e}"));
    outcome(ok, notes.join(", "))
}

fn criterion_5() -> Outcome {
    let grid = Grid::new(1, 1024, 1.0).unwrap();
    let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
    let k = double_phase_kernel(0.8, 1.2);
    let g = ExteriorSpec::Sine { amplitude: 1.0, frequency: 1.5, phase: 0.3 }.build();
    let dom = Region::ball([0.0, 0.0], 1.0, 1);
    let r = solve_dirichlet(&spec, &k, &dom, grid, &g, &zero(grid), &SolveConfig::default(), &AssemblyOptions::default())
        .unwrap();
    let theta = validate_spec(&spec).unwrap().theta;
    let mut ok = true;
    let mut notes = Vec::new();
    for c in [-0.3, 0.0, 0.3] {
        let radii = dyadic_radii(0.25, grid.h(), 4.0);
        let fit = holder_exponent_fit(r.solution(), &[c, 0.0], &radii, Some(&spec), HOLDER_SLACK).unwrap();
        ok &= fit.alpha_measured >= theta - HOLDER_SLACK;
        notes.push(format!("x0={c}: {:.3}", fit.alpha_measured));
    }
    outcome(ok, format!("Theta-0.1={:.2}; alpha {}", theta - HOLDER_SLACK, notes.join(", ")))
}

/// Indicator of the origin node: a single-cell spike with no fractional regularity to spare.
fn spike(grid: Grid) -> GridFunction {
    let h = grid.h();
    GridFunction::from_fn(grid, move |x| if x[0].abs() < 0.5 * h { 1.0 } else { 0.0 }, Exterior::constant(0.0))
}

fn criterion_6() -> Outcome {
    let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
    let k = double_phase_kernel(0.8, 1.2);
    let g = ExteriorSpec::Sine { amplitude: 0.3, frequency: 2.0, phase: 0.0 }.build();
    let dom = Region::ball([0.0, 0.0], 1.0, 1);
    let o = CheckOptions { stability_ratio: STABILITY_RATIO, ..CheckOptions::default() };
    let x0 = [0.1, 0.0];
    let mut levels: Vec<Vec<InequalityVerdict>> = vec![Vec::new(); 6];
    for cells in [128usize, 256, 512] {
        let grid = Grid::new(1, cells, 1.0).unwrap();
        let f = constant(grid, 1.0);
        let r = solve_dirichlet(&spec, &k, &dom, grid, &g, &f, &SolveConfig::default(), &AssemblyOptions::default()).unwrap();
        let u = r.solution();
        let g_sup = (0..grid.num_nodes())
            .filter(|&i| !dom.contains(&grid.node(i)))
            .map(|i| u.values[i].abs())
            .fold(0.0, f64::max);
        let vs = [
            caccioppoli_check(u, &f, &spec, &k, &x0, 0.125, 0.0625, &o),
            sobolev_poincare_check(u, &spec, &x0, 0.125, 1.5, &o),
            reverse_holder_check(u, &f, &spec, &k, &x0, 0.125, 2, 0.5, &o),
            self_improving_check(u, &f, &spec, &x0, 0.25, &o),
            boundedness_check(u, &f, &spec, &k, &x0, 0.25, Some(g_sup), &o),
            self_improving_check(&spike(grid), &f, &spec, &[0.0, 0.0], 0.25, &CheckOptions { certified_solution: false, ..o.clone() }),
        ];
        for (i, v) in vs.into_iter().enumerate() {
            levels[i].push(v.unwrap());
        }
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for (i, l) in levels.iter().enumerate() {
        let growth = if i >= 3 { Some(LHS_GROWTH) } else { None };
        let m = refine_verdicts(l, STABILITY_RATIO, growth);
        if i == 5 {
            ok &= !m.passed;
            let g = m.lhs_trace[2] / m.lhs_trace[1];
            notes.push(format!("spike control fails (growth {g:.3})"));
        } else {
            ok &= m.passed;
            notes.push(format!("{} {:.3}", m.name, m.stability_ratio));
        }
    }
    outcome(ok, notes.join(", "))
}

fn criterion_7() -> Outcome {
    let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
    let g = ExteriorSpec::Sine { amplitude: 1.0, frequency: 0.5, phase: 0.4 }.build();
    let grid = Grid::new(1, 256, 4.0).unwrap();
    let dom = Region::ball([0.0, 0.0], 4.0, 1);
    let mut gaps = Vec::new();
    for d in [0.2, 0.1, 0.05] {
        let k = KernelSpec {
            a: ACoef::Checkerboard { side: 0.25, low: 1.0 - d, high: 1.0 + d },
            b: BCoef::Constant { value: 0.5 },
        }
        .build();
        let r = solve_dirichlet(&spec, &k, &dom, grid, &g, &zero(grid), &SolveConfig::default(), &AssemblyOptions::default()).unwrap();
        let c = solve_averaged_comparison(r.solution(), &spec, &k, &SolveConfig::default(), &AssemblyOptions::default()).unwrap();
        gaps.push(c.gap);
    }
    outcome(
        gaps.windows(2).all(|w| w[1] <= w[0]),
        format!("gaps at delta 0.2/0.1/0.05: {:.3e} {:.3e} {:.3e}", gaps[0], gaps[1], gaps[2]),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let n = RANDOM_INSTANCES;
    let mut fails: Vec<String> = Vec::new();
    let mut tally = |name: &str, bad: usize| {
        if bad > 0 {
            fails.push(format!("{name}: {bad}/{n}"));
        }
    };

    let bad = (0..n)
        .filter(|_| {
            let ell = rng.gen_range(2.0..5.0);
            let c = monotonicity_constant(ell, 2000, &mut rng);
            let (xi, zeta): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            !(c > 0.0 && monotonicity_ratio(xi, zeta, ell) >= 0.9 * c)
        })
        .count();
    tally("pairing", bad);

    let bad = (0..n)
        .filter(|_| {
            let ell = rng.gen_range(2.0..5.0);
            let c = kkp2_constant(ell, 10_000, &mut rng);
            let (xi, zeta, w) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            !(c.is_finite() && kkp2_ratio(xi, zeta, w, ell) <= 1.25 * c)
        })
        .count();
    tally("kkp2", bad);

    let fo = FunctionalOptions::default();
    let grid = Grid::new(1, 32, 1.0).unwrap();
    let bad = (0..n)
        .filter(|_| {
            let vals = |rng: &mut ChaCha8Rng| (0..33).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
            let (a, b) = (vals(&mut rng), vals(&mut rng));
            let (ca, cb) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (m, al, r) = (rng.gen_range(2.0..4.0), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.8));
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let t = |v: Vec<f64>, c: f64| {
                nonlocal_tail(&GridFunction::new(grid, v, Exterior::constant(c)).unwrap(), &[0.0, 0.0], r, m, al, None, &fo)
                    .unwrap()
                    .value
            };
            t(sum, ca + cb) > (t(a, ca) + t(b, cb)) * (1.0 + 1e-12) + 1e-14
        })
        .count();
    tally("tail subadditivity", bad);

    let one = GridFunction::from_fn(Grid::new(1, 64, 2.0).unwrap(), |_| 1.0, Exterior::constant(1.0));
    let t2 = nonlocal_tail(&one, &[0.0, 0.0], 1.0, 2.0, 0.5, None, &fo).unwrap().value;
    let bad = (0..n)
        .filter(|_| {
            let (m, al, r) = (rng.gen_range(2.0..4.0), rng.gen_range(0.2..0.9), rng.gen_range(0.25..1.0));
            let got = nonlocal_tail(&one, &[0.0, 0.0], r, m, al, None, &fo).unwrap().value;
            let want = (2.0 / (m * al)).powf(1.0 / (m - 1.0));
            (got - want).abs() > 1e-6 * want
        })
        .count();
    tally("tail closed form", bad + usize::from((t2 - 2.0).abs() > 1e-6));

    let region = Region::ball([0.0, 0.0], 1.0, 1);
    let vo = VmoOptions { centers: 6, radii: 4, points_per_axis: 8, ..VmoOptions::default() };
    let bad = (0..n)
        .filter(|i| {
            let amp = rng.gen_range(0.05..0.5);
            let a = match i % 3 {
                0 => ACoef::Checkerboard { side: rng.gen_range(0.05..0.5), low: 1.0 - amp, high: 1.0 + amp },
                1 => ACoef::LogOscillating { mid: 1.0, amplitude: amp },
                _ => ACoef::USmooth { base: 1.0, amplitude: amp },
            };
            let k = KernelSpec { a, b: BCoef::Zero }.build();
            let (r1, r2) = (rng.gen_range(0.05..0.5), rng.gen_range(0.5..1.0));
            let (m1, m2) = (rng.gen_range(0.5..4.0), rng.gen_range(4.0..8.0));
            let v = |r, m| vmo_modulus(&k, &region, r, m, &vo).unwrap();
            let c = KernelPair::constant(1.0 + amp);
            !(v(r1, m1) <= v(r2, m1) && v(r1, m1) <= v(r1, m2) && vmo_modulus(&c, &region, r1, m1, &vo).unwrap() == 0.0)
        })
        .count();
    tally("vmo", bad);

    let bad = (0..n)
        .filter(|_| {
            let (eps, p, r) = (rng.gen_range(0.01..0.3), rng.gen_range(2.0..4.0), rng.gen_range(0.05..1.0));
            let dim = rng.gen_range(1..3usize);
            let l = |k: f64| mu_measure(&[0.0, 0.0], k * r, eps, p, dim).ln();
            let slope = (l(4.0) - l(1.0)) / 4f64.ln();
            (slope - (dim as f64 + p * eps)).abs() >= MU_FIT_TOL
        })
        .count();
    tally("mu doubling", bad);

    let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
    let k = KernelSpec { a: ACoef::USmooth { base: 1.0, amplitude: 0.3 }, b: BCoef::Constant { value: 0.5 } }.build();
    let g256 = Grid::new(1, 256, 1.0).unwrap();
    let bad = (0..n)
        .filter(|_| {
            let vals: Vec<f64> = (0..257).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = GridFunction::new(g256, vals.clone(), Exterior::constant(0.25)).unwrap();
            let f = GridFunction::new(g256, vals.iter().map(|v| v * v).collect(), Exterior::constant(0.0)).unwrap();
            let z1 = g256.node(rng.gen_range(96..160));
            let (l1, l2) = (0.5f64.powi(rng.gen_range(1..3)), 0.5f64.powi(rng.gen_range(1..3)));
            let (m1, m2) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
            let a = zoom_rescale_m(&u, &f, &k, &spec, &z1, 4.0 * l1, m1).unwrap();
            let z2 = [a.u.grid.h() * rng.gen_range(-2..3) as f64, 0.0];
            let ab = zoom_rescale_m(&a.u, &a.f, &a.kernel, &spec, &z2, 4.0 * l2, m2).unwrap();
            let c = zoom_rescale_m(&u, &f, &k, &spec, &[z1[0] + l1 * z2[0], 0.0], 4.0 * l1 * l2, m1 * m2).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + y.abs());
            let nodes_ok = (0..ab.u.grid.num_nodes()).all(|i| {
                let x = ab.u.grid.node(i);
                close(ab.u.values[i], c.u.eval(&x)) && close(ab.f.values[i], c.f.eval(&x))
            });
            !(nodes_ok && close(ab.b_factor * a.b_factor, c.b_factor))
        })
        .count();
    tally("zoom composition", bad);

    let pass = fails.is_empty();
    outcome(pass, if pass { format!("7 suites x {n} instances clean") } else { fails.join(", ") })
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_9() -> Outcome {
    let plan = load_plan(&Path::new(env!("CARGO_MANIFEST_DIR")).join("plans/getoor.plan")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = run_plan(&plan, a.path()).unwrap();
    let ob = run_plan(&plan, b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let same = ta == tb;
    outcome(
        same && oa.exit_code() == 0 && ob.exit_code() == 0 && oa.rows.len() == plan.jobs.len(),
        format!("{} artifacts, byte-identical: {same}", ta.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exponent arithmetic", criterion_1),
        ("quadrature oracles", criterion_2),
        ("Getoor recovery", criterion_3),
        ("monotone solver", criterion_4),
        ("double-phase Hölder exponent", criterion_5),
        ("inequality checkers", criterion_6),
        ("averaged-coefficient approximation", criterion_7),
        ("algebraic property suites", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {} ({name}): {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
