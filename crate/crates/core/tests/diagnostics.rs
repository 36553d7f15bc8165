use spde_core::coefficients::{CoefficientSchedule, EllipticitySpec, GrowthData, Nonlinearity, NonlinearityParams};
use spde_core::degiorgi::{estimate_alpha, level_cascade, level_energy, level_height, level_interval, martingale_stats, sup_norm, truncate, SupKind};
use spde_core::noise::NoisePath;
use spde_core::rng::{StreamKey, StreamRole};
use spde_core::solver::{solve_companion, solve_with, ProblemSpec, Scheme};
use spde_core::synthetic::{random_signs, FourierData};
use spde_core::verify::{self, check_interpolation, check_ito_energy, iteration_constant, ito_energy_balance, qv_constant};
use spde_core::{Field, Grid, SpdeError, Trajectory};

fn constant_trajectory(c: f64, dt: f64) -> Trajectory<f64> {
    let grid = Grid::new(1, 1.0, 16).unwrap();
    Trajectory::from_fn(grid, 0.0, 2.0, dt, |_| Field::constant(grid, c)).unwrap()
}

#[test]
fn iteration_and_qv_constants_match_closed_forms() {
    // u ≡ c, one mode with g₁ ≡ κ: every quantity of the cascade is explicit.
    let (c, kappa, a, k_max) = (3.0, 0.7, 1.5, 6);
    let dt = 1.0 / 256.0;
    let traj = constant_trajectory(c, dt);
    let grid = *traj.grid();
    let nl = Nonlinearity::new(vec![Field::zeros(grid), Field::constant(grid, kappa)], vec![0.0, 0.0], None).unwrap();
    let path = NoisePath::generate(1, 0.0, 2.0, dt, StreamKey::new(1, 0, StreamRole::Noise)).unwrap();
    let rows = level_cascade(&traj, &path, &nl, a, k_max, 1).unwrap();

    let energy = |k: usize| {
        let (s, e) = level_interval(k);
        (c - level_height(k, a)).max(0.0).powi(2) * (e - s).sqrt()
    };
    let (e1, e2) = (2.0 / 2.0, 1.0 / 2.0);
    let mut iter = 0.0f64;
    let mut qv = 0.0f64;
    for k in 0..=k_max {
        assert!((rows[k].energy - energy(k)).abs() <= 1e-12 * energy(k).max(1.0));
        let (s, e) = level_interval(k);
        let integrand = kappa * (c - level_height(k + 1, a)).max(0.0);
        let expect_qv = integrand * integrand * (e - s);
        assert!((rows[k].qv - expect_qv).abs() <= 1e-12 * expect_qv.max(1.0), "k = {k}");
        let x = martingale_stats(&traj, &path, &nl, k, a).unwrap();
        let dw_total: f64 = path.mode(1)[path.step_at(s).unwrap()..].iter().sum();
        assert!((x.path.last().unwrap() - integrand * dw_total).abs() <= 1e-10);
        if k >= 1 {
            let prev = energy(k - 1);
            let ratio = energy(k) * a.powf(e1) / ((prev + rows[k - 1].x_star) * prev.powf(e2));
            iter = iter.max(ratio.powf(1.0 / k as f64));
            qv = qv.max((expect_qv / energy(k).powi(2)).powf(1.0 / k as f64));
        }
    }
    let fitted = iteration_constant(&rows, 1, 0.3).unwrap();
    assert!((fitted - iter).abs() <= 1e-10 * iter, "{fitted} vs {iter}");
    let fitted_qv = qv_constant(&rows);
    assert!((fitted_qv - qv).abs() <= 1e-10 * qv, "{fitted_qv} vs {qv}");
}

#[test]
fn nonpositive_trajectories_are_vacuous() {
    let traj = constant_trajectory(-0.5, 1e-2);
    let grid = *traj.grid();
    let nl = Nonlinearity::new(vec![Field::zeros(grid), Field::constant(grid, 1.0)], vec![0.0, 1.0], None).unwrap();
    let path = NoisePath::generate(1, 0.0, 2.0, 1e-2, StreamKey::new(2, 0, StreamRole::Noise)).unwrap();
    let rows = level_cascade(&traj, &path, &nl, 1.0, 5, 1).unwrap();
    assert!(rows.iter().all(|r| r.energy == 0.0 && r.x_star == 0.0 && r.qv == 0.0));
    assert_eq!(iteration_constant(&rows, 1, 0.3).unwrap(), 0.0);
    assert_eq!(qv_constant(&rows), 0.0);
    assert!(verify::check_monotonicity(&rows).pass);
}

#[test]
fn deterministic_heat_run_has_finite_iteration_constant() {
    let grid = Grid::new(1, 4.0, 64).unwrap();
    let ps = heat_spec(grid, Field::from_fn(grid, |x| 3.0 * (-(x[0] - 2.0).powi(2)).exp()), 1e-2);
    let path = NoisePath::generate(0, 0.0, 2.0, 1e-2, StreamKey::new(5, 0, StreamRole::Noise)).unwrap();
    let traj = solve_with(&ps, &CoefficientSchedule::identity(grid), &path).unwrap().trajectory;
    let rows = level_cascade(&traj, &path, &ps.nonlinearity, 1.0, 6, 5).unwrap();
    assert!(rows.iter().all(|r| r.x_star == 0.0));
    let c = iteration_constant(&rows, 1, 0.3).unwrap();
    assert!(c.is_finite() && c > 0.0, "{c}");
}

fn heat_spec(grid: Grid, u0: Field<f64>, dt: f64) -> ProblemSpec<f64> {
    ProblemSpec {
        grid,
        ellipticity: EllipticitySpec { lambda: 1.0, epoch_dt: 2.0, cell: 1 },
        growth: GrowthData::new(Field::zeros(grid), 1.0).unwrap(),
        nonlinearity: Nonlinearity::zero(grid, 0),
        u0,
        t_end: 2.0,
        dt,
        scheme: Scheme::SemiImplicit,
    }
}

#[test]
fn level_energy_is_the_truncated_mixed_norm() {
    let grid = Grid::new(2, 1.0, 16).unwrap();
    let traj = FourierData::random(grid, 5, 3, 1.5, &StreamKey::new(9, 0, StreamRole::Synthetic)).trajectory::<f64>(0.0, 2.0, 0.02).unwrap();
    for (k, a) in [(0, 1.0), (2, 1.0), (3, 2.0)] {
        let truncated = traj.map(|f| truncate(f, k, a).unwrap());
        let direct = truncated.mixed_norm(4.0, 2.0, level_interval(k)).unwrap().powi(2);
        let u = level_energy(&traj, k, a).unwrap();
        assert!((u - direct).abs() <= 1e-12 * direct.max(1.0));
    }
    let positive = traj.map(|f| f.positive_part());
    let sup = sup_norm(&traj, (1.0, 2.0), SupKind::Plus).unwrap();
    let mixed = positive.mixed_norm(f64::INFINITY, f64::INFINITY, (1.0, 2.0)).unwrap();
    assert!((sup - mixed).abs() <= 1e-12);
    let u0 = level_energy(&traj, 0, 7.0).unwrap();
    let plus = positive.mixed_norm(4.0, 2.0, (0.0, 2.0)).unwrap().powi(2);
    assert!((u0 - plus).abs() <= 1e-12 * plus.max(1.0));
}

#[test]
fn deterministic_ito_balance_is_exact() {
    // f = g = 0 and u > 0 throughout, so u_{0,a} = u and the balance is the scheme's energy identity.
    for dim in [1, 2] {
        let points = if dim == 1 { 64 } else { 16 };
        let grid = Grid::new(dim, 1.0, points).unwrap();
        let u0 = random_signs::<f64>(grid, &StreamKey::new(4, 0, StreamRole::InitialData)).map(|v| 2.0 + v);
        let mut ps = heat_spec(grid, u0, 1e-2);
        ps.ellipticity = EllipticitySpec { lambda: 0.5, epoch_dt: 0.1, cell: 4 };
        let path = NoisePath::generate(0, 0.0, 2.0, 1e-2, StreamKey::new(4, 0, StreamRole::Noise)).unwrap();
        let schedule = ps.schedule(path.key());
        let traj = solve_with(&ps, &schedule, &path).unwrap().trajectory;
        let r = ito_energy_balance(&traj, &schedule, &ps.nonlinearity, &path, 0, 1.0).unwrap();
        assert!(r.relative() <= 1e-8, "n = {dim}: {r:?}");
    }
}

#[test]
fn zero_trajectory_balances() {
    let traj = constant_trajectory(0.0, 1e-2);
    let grid = *traj.grid();
    let nl = Nonlinearity::zero(grid, 2);
    let path = NoisePath::generate(2, 0.0, 2.0, 1e-2, StreamKey::new(1, 1, StreamRole::Noise)).unwrap();
    let r = ito_energy_balance(&traj, &CoefficientSchedule::identity(grid), &nl, &path, 1, 1.0).unwrap();
    assert_eq!(r.residual, 0.0);
}

#[test]
fn ito_residual_shrinks_under_refinement() {
    let grid = Grid::new(1, 1.0, 64).unwrap();
    let growth = GrowthData::bump(grid, 1.0, 0.25, 3.0).unwrap();
    let params = NonlinearityParams { drift_lambda: 1.0, noise_lambda: 2.0, modes: 4, ..Default::default() };
    let nl = Nonlinearity::from_params(&growth, &params).unwrap();
    let u0 = random_signs::<f64>(grid, &StreamKey::new(8, 0, StreamRole::InitialData)).scaled(3.0);
    let dts = [2e-3, 1e-3, 5e-4];
    let mut levels: Vec<(f64, Vec<_>)> = dts.iter().map(|&dt| (dt, Vec::new())).collect();
    for id in 0..16 {
        let key = StreamKey::new(8, id, StreamRole::Noise);
        let fine = NoisePath::generate(4, 0.0, 2.0, 5e-4, key).unwrap();
        for (j, &dt) in dts.iter().enumerate() {
            let path = fine.coarsen((dt / 5e-4).round() as usize).unwrap();
            let ps = ProblemSpec {
                grid,
                ellipticity: EllipticitySpec { lambda: 0.5, epoch_dt: 0.1, cell: 4 },
                growth: growth.clone(),
                nonlinearity: nl.clone(),
                u0: u0.clone(),
                t_end: 2.0,
                dt,
                scheme: Scheme::SemiImplicit,
            };
            let schedule = ps.schedule(&key);
            let traj = solve_with(&ps, &schedule, &path).unwrap().trajectory;
            levels[j].1.push(ito_energy_balance(&traj, &schedule, &nl, &path, 1, 1.0).unwrap());
        }
    }
    let check = check_ito_energy(&levels);
    assert!(check.pass, "{check:?}");
}

#[test]
fn frozen_integrand_isometry() {
    // A fixed trajectory makes the integrand deterministic: Var(X_end) = qv.
    let grid = Grid::new(1, 1.0, 32).unwrap();
    let dt = 1.0 / 128.0;
    let traj = FourierData::random(grid, 4, 2, 1.0, &StreamKey::new(12, 0, StreamRole::Synthetic))
        .trajectory::<f64>(0.0, 2.0, dt)
        .unwrap()
        .map(|f| f.map(|v| v + 2.0));
    let growth = GrowthData::bump(grid, 1.0, 0.25, 1.0).unwrap();
    let nl = Nonlinearity::from_params(&growth, &NonlinearityParams { modes: 3, ..Default::default() }).unwrap();
    let mut ends = Vec::new();
    let mut qv = Vec::new();
    for id in 0..1000 {
        let path = NoisePath::generate(3, 0.0, 2.0, dt, StreamKey::new(12, id, StreamRole::Noise)).unwrap();
        let x = martingale_stats(&traj, &path, &nl, 1, 1.0).unwrap();
        ends.push(*x.path.last().unwrap());
        qv.push(x.qv);
    }
    assert!(qv.iter().all(|&q| q == qv[0]) && qv[0] > 0.0);
    let ratio = spde_core::stats::variance(&ends) / qv[0];
    assert!((0.9..=1.1).contains(&ratio), "Var/qv = {ratio}");
}

#[test]
fn interpolation_holds_on_synthetic_cubes() {
    let grid = Grid::new(3, 1.0, 8).unwrap();
    for id in 0..10 {
        let traj = FourierData::random(grid, 6, 2, 1.0, &StreamKey::new(13, id, StreamRole::Synthetic)).trajectory::<f64>(0.0, 2.0, 0.1).unwrap();
        let r = check_interpolation(&traj, (1.0, 2.0)).unwrap();
        assert!(r.pass, "trajectory {id}: {r:?}");
    }
    let zero = Trajectory::from_fn(grid, 0.0, 2.0, 0.1, |_| Field::<f64>::zeros(grid)).unwrap();
    assert!(check_interpolation(&zero, (1.0, 2.0)).unwrap().pass);
    let line = Grid::new(1, 1.0, 8).unwrap();
    let flat = Trajectory::from_fn(line, 0.0, 2.0, 0.1, |_| Field::<f64>::zeros(line)).unwrap();
    assert!(matches!(check_interpolation(&flat, (1.0, 2.0)), Err(SpdeError::UnsupportedDimension(1, _))));
}

fn heat_alpha(points: usize) -> f64 {
    // Box of side 4 so the window [1, 2] still carries structure after smoothing.
    let coarse = Grid::new(1, 4.0, 64).unwrap();
    let signs = random_signs::<f64>(coarse, &StreamKey::new(21, 0, StreamRole::InitialData));
    let grid = Grid::new(1, 4.0, points).unwrap();
    let ratio = points / 64;
    let u0 = Field::new(grid, (0..points).map(|j| signs.values()[j / ratio]).collect()).unwrap();
    let dt = 1e-3;
    let ps = heat_spec(grid, u0, dt);
    let path = NoisePath::generate(0, 0.0, 2.0, dt, StreamKey::new(21, 0, StreamRole::Noise)).unwrap();
    let traj = solve_with(&ps, &CoefficientSchedule::identity(grid), &path).unwrap().trajectory;
    let est = estimate_alpha(&traj, (1.0, 2.0)).unwrap();
    assert!(!est.degenerate);
    est.alpha
}

#[test]
fn heat_holder_exponent_is_positive_and_stable() {
    let (a, b) = (heat_alpha(64), heat_alpha(128));
    assert!(a > 0.0 && b > 0.0);
    assert!((a - b).abs() <= 0.1, "{a} vs {b}");
}

#[test]
fn noiseless_split_reproduces_the_exponent() {
    let grid = Grid::new(1, 4.0, 64).unwrap();
    let u0 = random_signs::<f64>(grid, &StreamKey::new(22, 0, StreamRole::InitialData));
    let ps = heat_spec(grid, u0, 1e-2);
    let path = NoisePath::generate(0, 0.0, 2.0, 1e-2, StreamKey::new(22, 0, StreamRole::Noise)).unwrap();
    let traj = solve_with(&ps, &CoefficientSchedule::identity(grid), &path).unwrap().trajectory;
    let split = solve_companion(&traj, &ps.nonlinearity, &path, 0.5).unwrap();
    let u_alpha = estimate_alpha(&traj, (1.0, 2.0)).unwrap();
    let phi_alpha = estimate_alpha(&split.phi, (1.0, 2.0)).unwrap();
    assert_eq!(u_alpha.alpha, phi_alpha.alpha);
    assert!(estimate_alpha(&split.v, (1.0, 2.0)).unwrap().degenerate);
}

#[test]
fn window_geometry() {
    assert_eq!(level_interval(0), (0.0, 2.0));
    assert_eq!(level_interval(1), (0.5, 2.0));
    assert_eq!(level_interval(3), (0.875, 2.0));
    assert_eq!(level_height(0, 4.0), 0.0);
    assert_eq!(level_height(2, 4.0), 3.0);
}
