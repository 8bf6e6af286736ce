use ionyield::beam::{BeamGeometry, IntensityGrid};
use ionyield::deconv::*;
use ionyield::fitkit::{fit_two_slope, FitOptions};
use ionyield::focalavg::{average_full_focus, AverageMode, YieldCurve};
use ionyield::ionmodel::ProbabilityModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

struct Case {
    grid: IntensityGrid,
    truth: Vec<f64>,
    kernel: KernelMatrix,
    s: Vec<f64>,
}

fn yield_curve(grid: &IntensityGrid, s: Vec<f64>) -> YieldCurve {
    let n = s.len();
    YieldCurve { grid: grid.clone(), s, mode: AverageMode::FullFocus, truncation_bound: vec![0.0; n], metadata: vec![] }
}

fn case(n: usize) -> Case {
    let beam = BeamGeometry::default_800nm();
    let model = ProbabilityModel::preset("aniline").unwrap();
    let grid = IntensityGrid::logspace(1e12, 1.5e14, n).unwrap();
    let table = model.curve(&IntensityGrid::logspace(5e7, 1.5e14, 650).unwrap()).unwrap();
    let reference = average_full_focus(&table, &beam, &grid).unwrap();
    let k0 = build_kernel(&beam, &grid, &grid).unwrap();
    let kernel = with_tail(&k0, &reference).unwrap().expect("grid stops short of the cutoff");
    let truth: Vec<f64> = grid.values().iter().map(|i| model.probability(*i).unwrap()).collect();
    let s = kernel.apply(&truth);
    Case { grid, truth, kernel, s }
}

fn truth_fn(c: &Case) -> impl Fn(f64) -> f64 + '_ {
    move |i| ionyield::numeric::interp::loglog(c.grid.values(), &c.truth, i)
}

fn noisy(c: &Case, level: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = Normal::new(0.0, level).unwrap();
    c.s.iter().map(|v| v * (1.0 + nd.sample(&mut rng))).collect()
}

#[test]
fn rows_reproduce_the_direct_average() {
    let beam = BeamGeometry::default_800nm();
    let model = ProbabilityModel::preset("aniline").unwrap();
    let grid = IntensityGrid::logspace(1e12, 1.5e14, 150).unwrap();
    let table = model.curve(&IntensityGrid::logspace(5e7, 1.5e14, 1300).unwrap()).unwrap();
    let direct = average_full_focus(&table, &beam, &grid).unwrap();
    let k = with_tail(&build_kernel(&beam, &grid, &grid).unwrap(), &direct).unwrap().unwrap();
    let p: Vec<f64> = grid.values().iter().map(|i| model.probability(*i).unwrap()).collect();
    let ks = k.apply(&p);
    for (j, (a, b)) in ks.iter().zip(&direct.s).enumerate() {
        assert!((a / b - 1.0).abs() < 5e-3, "row {j}: {a:e} vs {b:e}");
    }
}

#[test]
fn kernel_is_lower_triangular_and_nonnegative() {
    let c = case(40);
    let w = &c.kernel.weights;
    for j in 0..w.nrows() {
        for k in 0..w.ncols() {
            assert!(w[(j, k)] >= 0.0);
            if k > j {
                assert_eq!(w[(j, k)], 0.0, "K[{j}][{k}]");
            }
        }
        assert!(w[(j, j)] > 0.0);
    }
}

#[test]
fn kernel_scales_with_the_focal_volume() {
    let grid = IntensityGrid::logspace(1e12, 1e14, 25).unwrap();
    let a = BeamGeometry::default_800nm();
    let b = BeamGeometry::new(0.8, 2.0 * a.waist_w0).unwrap();
    let ka = build_kernel_with(&a, &grid, &grid, 1e-4, Some(4.0)).unwrap();
    let kb = build_kernel_with(&b, &grid, &grid, 1e-4, Some(4.0)).unwrap();
    let ratio = b.volume_scale() / a.volume_scale();
    assert!((ratio - 16.0).abs() < 1e-9);
    for (x, y) in ka.weights.iter().zip(kb.weights.iter()) {
        if *x > 0.0 {
            assert!((y / x / ratio - 1.0).abs() < 1e-9);
        } else {
            assert_eq!(*y, 0.0);
        }
    }
}

#[test]
fn noiseless_round_trip() {
    let c = case(60);
    let y = yield_curve(&c.grid, c.s.clone());
    for order in [1, 2] {
        let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(1e-8, order, false).unwrap()).unwrap();
        let err = interior_error(|i| d.interpolate(i), truth_fn(&c), c.grid.values());
        assert!(err <= 0.05, "order {order}: interior error {err}");
    }
    // the slopes live in the low-P tail, where a first-difference penalty at this
    // λ already flattens p̂; curvature penalties leave power laws nearly alone
    let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(1e-8, 2, false).unwrap()).unwrap();
    let f = fit_two_slope(c.grid.values(), &d.p, &FitOptions::default()).unwrap();
    assert!((f.n_a - 5.0).abs() <= 0.3 && (f.n_b - 2.0).abs() <= 0.3, "{f:?}");
}

#[test]
fn unregularized_solve_reproduces_exact_data() {
    let c = case(60);
    let y = yield_curve(&c.grid, c.s.clone());
    let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(0.0, 2, false).unwrap()).unwrap();
    assert!(d.residual_rel <= 1e-9, "{}", d.residual_rel);
    let err = interior_error(|i| d.interpolate(i), truth_fn(&c), c.grid.values());
    assert!(err < 1e-2, "{err}");
}

#[test]
fn one_percent_noise_with_l_curve() {
    let c = case(60);
    let seeds: Vec<u64> = (0..100).collect();
    let mut errs: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let y = yield_curve(&c.grid, noisy(&c, 0.01, seed));
            let lc = l_curve(&y, &c.kernel, DEFAULT_PENALTY_ORDER, DEFAULT_LAMBDA_RANGE).unwrap();
            let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(lc.lambda(), DEFAULT_PENALTY_ORDER, false).unwrap())
                .unwrap();
            interior_error(|i| d.interpolate(i), truth_fn(&c), c.grid.values())
        })
        .collect();
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = 0.5 * (errs[49] + errs[50]);
    assert!(median <= 0.15, "median interior error {median}");
}

#[test]
fn error_against_lambda_has_an_interior_minimum() {
    let c = case(60);
    let y = yield_curve(&c.grid, noisy(&c, 0.01, 3));
    let (l0, l1) = (1e-12f64.ln(), 1e2f64.ln());
    let errs: Vec<f64> = (0..29)
        .map(|k| {
            let lam = (l0 + (l1 - l0) * k as f64 / 28.0).exp();
            let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(lam, DEFAULT_PENALTY_ORDER, false).unwrap()).unwrap();
            interior_error(|i| d.interpolate(i), truth_fn(&c), c.grid.values())
        })
        .collect();
    let best = (0..errs.len()).min_by(|a, b| errs[*a].partial_cmp(&errs[*b]).unwrap()).unwrap();
    assert!(best > 0 && best < errs.len() - 1, "{errs:?}");
    assert!(errs[0] > 2.0 * errs[best] && errs[errs.len() - 1] > 2.0 * errs[best], "{errs:?}");
}

#[test]
fn nonnegativity_constraint_holds() {
    let c = case(60);
    let y = yield_curve(&c.grid, noisy(&c, 0.05, 11));
    let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(1e-9, 2, true).unwrap()).unwrap();
    assert!(d.p.iter().all(|v| *v >= 0.0));
    assert!(d.p.iter().all(|v| *v <= 1.0));
}

#[test]
fn zero_signal_gives_zero() {
    let c = case(30);
    let y = yield_curve(&c.grid, vec![0.0; 30]);
    for lam in [0.0, 1e-6, 1.0] {
        let d = deconvolve(&y, &c.kernel, &RegularizationSpec::new(lam, 2, false).unwrap()).unwrap();
        assert!(d.p.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let c = case(30);
    let mut y = yield_curve(&c.grid, c.s.clone());
    y.mode = AverageMode::Clipped;
    assert!(deconvolve(&y, &c.kernel, &RegularizationSpec::new(1e-6, 2, false).unwrap()).is_err());
    let other = IntensityGrid::logspace(1e12, 1.5e14, 31).unwrap();
    let y = yield_curve(&other, vec![1.0; 31]);
    assert!(deconvolve(&y, &c.kernel, &RegularizationSpec::new(1e-6, 2, false).unwrap()).is_err());
    assert!(RegularizationSpec::new(-1.0, 2, false).is_err());
}

#[test]
fn l_curve_without_a_corner_keeps_the_data() {
    let c = case(60);
    let y = yield_curve(&c.grid, c.s.clone());
    let lc = l_curve(&y, &c.kernel, DEFAULT_PENALTY_ORDER, DEFAULT_LAMBDA_RANGE).unwrap();
    assert_eq!(lc.best, 0, "{:?}", lc.points[lc.best]);
    let noisy = yield_curve(&c.grid, noisy(&c, 0.01, 3));
    let lc = l_curve(&noisy, &c.kernel, DEFAULT_PENALTY_ORDER, DEFAULT_LAMBDA_RANGE).unwrap();
    assert!(lc.points[lc.best].curvature >= MIN_CORNER_CURVATURE && lc.best > 0);
}
