use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thz_core::channel::{channel_matrix, AngleMode, ChannelGenerator, SystemConfig};
use thz_core::codebook::*;
use thz_core::numerics::{kron, vectorize};
use thz_core::training::{observe, random_beams, PilotBeams, TrainingConfig};
use thz_core::{CMatrix, CVector, C64};

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn tiny_system() -> SystemConfig {
    SystemConfig { subcarriers: 32, rx: UpaSize::new(4, 4), tx: UpaSize::new(2, 2), ..SystemConfig::paper() }
}

fn random_phases(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    let s = 1.0 / (rows as f64).sqrt();
    CMatrix::from_fn(rows, cols, |_, _| C64::from_polar(s, rng.random_range(0.0..2.0 * PI)))
}

#[test]
fn dense_dictionary_matches_kronecker_definition() {
    let sys = tiny_system();
    let grid = GridSpec::new(4, 2, 1);
    let train = TrainingConfig { streams: 6, subframes: 3, pilot_subcarriers: 4, rf_chains: None, share_beams: false };
    let beams = random_beams(&sys, &train, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let dict = build_dictionaries(&sys, &grid, 1, &beams).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (p, b) in dict.pilots.iter().zip(&beams) {
        let delta = sys.subcarrier_offset(b.subcarrier);
        let ar = array_response(sys.rx, 4, 4, delta, sys.carrier_hz);
        let at = array_response(sys.tx, 2, 2, delta, sys.carrier_hz);
        let oracle = kron(&at.ad_mul(&b.pilot).transpose(), &ar.ad_mul(&b.combiner).adjoint()).unwrap();
        let theta = p.theta().unwrap();
        assert_eq!(theta.shape(), (6 * 3, grid.columns(1)));
        assert!(max_abs(&(&theta - &oracle)) < 1e-12);

        let z = CVector::from_fn(theta.ncols(), |_, _| C64::new(rng.random(), rng.random()));
        let r = CVector::from_fn(theta.nrows(), |_, _| C64::new(rng.random(), rng.random()));
        assert!((p.apply(&z) - &theta * &z).norm() < 1e-10);
        assert!((p.correlate(&r) - theta.ad_mul(&r)).norm() < 1e-10);
        for j in [0, 7, theta.ncols() - 1] {
            assert!((p.column(j) - theta.column(j)).norm() < 1e-12);
        }
    }
}

#[test]
fn identity_beams_give_vectorized_outer_products() {
    let sys = tiny_system();
    let grid = GridSpec::new(4, 2, 1);
    let beams = vec![PilotBeams {
        subcarrier: 3,
        combiner: CMatrix::identity(16, 16),
        pilot: CMatrix::identity(4, 4),
    }];
    let dict = build_dictionaries(&sys, &grid, 1, &beams).unwrap();
    let p = &dict.pilots[0];
    for j in [0, 5, 33, 63] {
        let (ir, it) = GridIndex::from_flat(j, &grid, 1).pair(&grid, 1);
        let outer = p.array_rx.column(ir) * p.array_tx.column(it).adjoint();
        assert!((p.column(j) - vectorize(&outer)).norm() < 1e-12);
    }
}

#[test]
fn pilot_columns_differ_only_by_squint() {
    let sys = tiny_system();
    let grid = GridSpec::new(4, 2, 1);
    let w = CMatrix::identity(16, 16);
    let x = CMatrix::identity(4, 4);
    let beams: Vec<PilotBeams> =
        [1, 32].into_iter().map(|k| PilotBeams { subcarrier: k, combiner: w.clone(), pilot: x.clone() }).collect();
    let dict = build_dictionaries(&sys, &grid, 1, &beams).unwrap();
    for j in [2, 40] {
        let angles = GridIndex::from_flat(j, &grid, 1).angles(&grid, 1);
        for p in &dict.pilots {
            let br = upa_vector(sys.rx, angles.rx_h, angles.rx_v, p.delta, sys.carrier_hz);
            let bt = upa_vector(sys.tx, angles.tx_h, angles.tx_v, p.delta, sys.carrier_hz);
            assert!((p.column(j) - vectorize(&(br * bt.adjoint()))).norm() < 1e-12);
        }
    }
}

#[test]
fn beam_pattern_mean_matches_closed_form() {
    let (n, q, draws) = (8, 4, 10_000);
    let fc = 142e9;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [(0.1, 0.1, 0.0), (0.05, -0.2, 4e9), (0.3, 0.25, -4e9)];
    let mut samples = vec![Vec::with_capacity(draws); cases.len()];
    for _ in 0..draws {
        let w = random_phases(n, q, &mut rng);
        for (c, &(psi, psi_i, delta)) in cases.iter().enumerate() {
            samples[c].push(beam_pattern(&w, psi, psi_i, delta, fc));
        }
    }
    for (c, &(psi, psi_i, delta)) in cases.iter().enumerate() {
        let closed = steering_vector(n, psi, delta, fc).dotc(&steering_vector(n, psi_i, delta, fc)) * (q as f64 / n as f64);
        let mean = samples[c].iter().sum::<C64>() / draws as f64;
        for part in [|z: C64| z.re, |z: C64| z.im] {
            let m = part(mean);
            let var = samples[c].iter().map(|&z| (part(z) - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let sigma = (var / draws as f64).sqrt();
            assert!((m - part(closed)).abs() <= 3.0 * sigma + 1e-12, "case {c}: {m} vs {}", part(closed));
        }
    }
}

#[test]
fn beam_pattern_on_itself_is_received_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random_phases(16, 5, &mut rng);
    for psi in [-0.4, 0.0, 0.2] {
        let p = beam_pattern(&w, psi, psi, 1e9, 142e9);
        let power = w.ad_mul(&steering_vector(16, psi, 1e9, 142e9)).norm_squared();
        assert!(p.im.abs() < 1e-14 && (p.re - power).abs() < 1e-12);
    }
}

/// With a single on-grid path and no noise, every pilot's correlation with its
/// own squinted dictionary peaks on the same (true) column. Identity beams keep
/// the columns unit-norm, so the peak is strict by Cauchy–Schwarz.
#[test]
fn frequency_dependent_dictionaries_share_the_peak() {
    let sys = SystemConfig { paths: 1, common_paths: 1, angle_mode: AngleMode::OnGrid, ..tiny_system() };
    let grid = GridSpec::new(4, 2, 2);
    let gen = ChannelGenerator::new(sys.clone(), grid).unwrap();
    let beams: Vec<PilotBeams> = [1, 9, 17, 25, 32]
        .into_iter()
        .map(|k| PilotBeams { subcarrier: k, combiner: CMatrix::identity(16, 16), pilot: CMatrix::identity(4, 4) })
        .collect();
    let dict = build_dictionaries(&sys, &grid, 2, &beams).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = gen.draw(0, &mut rng);
        let obs = observe(&real, &beams, &sys, 0.0, &mut rng).unwrap();
        for (p, y) in dict.pilots.iter().zip(&obs.measurements) {
            let c = p.correlate(&vectorize(y));
            let best = (0..c.len()).max_by(|&a, &b| c[a].norm().total_cmp(&c[b].norm())).unwrap();
            assert_eq!(vec![best], real.support, "seed {seed}, subcarrier {}", p.subcarrier);
        }
        let h = channel_matrix(&real, 1, &sys).unwrap();
        assert!((vectorize(&h) - vectorize(&obs.measurements[0])).norm() < 1e-12);
    }
}

#[test]
fn hierarchical_search_cost_is_linear_in_levels() {
    let (g, m) = (3usize, 2usize);
    let mut parent = 0.0;
    let mut searched = 0;
    for level in 1..=m {
        let sub = hierarchical_subcodebook(level, parent, g);
        searched += sub.len();
        parent = sub[2];
    }
    assert_eq!(searched, m * g);
    assert!(g.pow(m as u32) > searched);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn array_response_columns_have_unit_norm(
        nv in 1usize..5, nh in 1usize..5, gh in 1usize..9, gv in 1usize..9, delta in -4e9f64..4e9,
    ) {
        let a = array_response(UpaSize::new(nv, nh), gh, gv, delta, 142e9);
        prop_assert_eq!(a.shape(), (nv * nh, gh * gv));
        for c in a.column_iter() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_indices_round_trip(sub_rx in 1usize..5, sub_tx in 1usize..4, levels in 1usize..3, seed in any::<u64>()) {
        let grid = GridSpec::new(sub_rx, sub_tx, levels);
        let j = ChaCha8Rng::seed_from_u64(seed).random_range(0..grid.columns(levels));
        let idx = GridIndex::from_flat(j, &grid, levels);
        prop_assert_eq!(idx.flat(&grid, levels), j);
        let (ir, it) = idx.pair(&grid, levels);
        prop_assert_eq!(it * grid.rx_size(levels) + ir, j);
        let d = grid.dims(levels);
        let a = idx.as_array();
        prop_assert!(a.iter().zip(d).all(|(&i, n)| i < n));
        prop_assert_eq!(GridIndex::nearest(&idx.angles(&grid, levels), &grid, levels), idx);
    }

    #[test]
    fn child_codewords_stay_near_parent(g in 2usize..6, level in 2usize..5, pick in 0usize..6, seed in any::<u64>()) {
        let parent_grid = uniform_grid(g.pow(level as u32 - 1));
        let parent = parent_grid[ChaCha8Rng::seed_from_u64(seed).random_range(0..parent_grid.len())];
        let children = hierarchical_subcodebook(level, parent, g);
        prop_assert_eq!(children.len(), g);
        let half_step = 0.5 / (g.pow(level as u32 - 1) as f64);
        let psi = children[pick % g];
        let gap = (psi - parent).rem_euclid(1.0);
        prop_assert!(gap.min(1.0 - gap) < half_step);
        prop_assert!((-0.5..0.5).contains(&psi));
    }
}
