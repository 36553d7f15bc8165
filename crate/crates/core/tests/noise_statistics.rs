use spde_core::noise::NoisePath;
use spde_core::rng::{StreamKey, StreamRole};
use spde_core::stats::{correlation, mean, variance};

const PATHS: u64 = 10_000;
const MODES: usize = 3;

fn terminal_values(seed: u64) -> Vec<Vec<f64>> {
    let mut by_mode: Vec<Vec<f64>> = (0..MODES).map(|_| Vec::with_capacity(PATHS as usize)).collect();
    for p in 0..PATHS {
        let path = NoisePath::<f64>::generate(MODES, 0.0, 1.0, 0.01, StreamKey::new(seed, p, StreamRole::Noise)).unwrap();
        for (i, column) in by_mode.iter_mut().enumerate() {
            column.push(path.mode(i + 1).iter().sum());
        }
    }
    by_mode
}

#[test]
fn unit_time_sums_are_standard_normal() {
    let w = terminal_values(17);
    for (i, column) in w.iter().enumerate() {
        let v = variance(column);
        assert!((0.94..=1.06).contains(&v), "mode {}: variance {v}", i + 1);
        // 3σ of the sample mean is 0.03.
        assert!(mean(column).abs() < 0.03, "mode {}: mean {}", i + 1, mean(column));
    }
}

#[test]
fn modes_are_uncorrelated() {
    let w = terminal_values(18);
    for i in 0..MODES {
        for j in i + 1..MODES {
            let c = correlation(&w[i], &w[j]);
            assert!((-0.05..=0.05).contains(&c), "modes {} and {}: correlation {c}", i + 1, j + 1);
        }
    }
}

#[test]
fn neighbouring_paths_are_uncorrelated() {
    let w = terminal_values(19);
    let shifted: Vec<f64> = w[0][1..].to_vec();
    let c = correlation(&w[0][..w[0].len() - 1], &shifted);
    assert!(c.abs() <= 0.05, "lag-one path correlation {c}");
}

#[test]
fn coarsening_composes_and_preserves_totals() {
    let fine = NoisePath::<f64>::generate(4, 0.0, 2.0, 1e-3, StreamKey::new(5, 9, StreamRole::Noise)).unwrap();
    assert_eq!(fine.coarsen(1).unwrap(), fine);
    let twice = fine.coarsen(2).unwrap().coarsen(2).unwrap();
    let once = fine.coarsen(4).unwrap();
    assert_eq!(twice.dt(), once.dt());
    for i in 1..=4 {
        // Pairwise sums of pairwise sums differ from 4-term left folds only by rounding.
        for (a, b) in twice.mode(i).iter().zip(once.mode(i)) {
            assert!((a - b).abs() <= 1e-15);
        }
        let total_fine: f64 = fine.mode(i).iter().sum();
        let total_coarse: f64 = once.mode(i).iter().sum();
        assert!((total_fine - total_coarse).abs() <= 1e-12);
    }
    assert!(fine.coarsen(3).is_err());
    assert!(fine.coarsen(4096).is_err());
}

#[test]
fn regeneration_is_bit_identical() {
    let key = StreamKey::new(123, 4, StreamRole::Noise);
    let a = NoisePath::<f64>::generate(16, 0.0, 2.0, 1e-3, key).unwrap();
    let b = NoisePath::<f64>::generate(16, 0.0, 2.0, 1e-3, key).unwrap();
    assert_eq!(a, b);
    let other = NoisePath::<f64>::generate(16, 0.0, 2.0, 1e-3, key.with_role(StreamRole::Coefficient)).unwrap();
    assert_ne!(a, other);
}
