use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thz_core::channel::*;
use thz_core::codebook::{AngleTuple, DictionarySet, GridIndex, GridSpec, PilotDictionary, UpaSize};
use thz_core::estimators::*;
use thz_core::numerics::{frobenius_sq, least_squares};
use thz_core::training::{calibrate_noise, observe, random_beams, Observation, TrainingConfig};
use thz_core::{CMatrix, CVector, C64};

struct Case {
    sys: SystemConfig,
    grid: GridSpec,
    real: ChannelRealization,
    obs: Observation,
}

impl Case {
    fn problem(&self) -> SensingProblem<'_> {
        SensingProblem::new(&self.sys, self.grid, &self.obs).unwrap()
    }

    fn nmse(&self, res: &EstimateResult) -> f64 {
        let (mut e, mut p) = (0.0, 0.0);
        for k in self.obs.subcarriers() {
            let h = channel_matrix(&self.real, k, &self.sys).unwrap();
            e += frobenius_sq(&(&h - res.channel_matrix(k, &self.sys)));
            p += frobenius_sq(&h);
        }
        e / p
    }
}

/// 4×4 / 2×2 arrays, 32 subcarriers, on-grid paths with unambiguous delays.
fn small_case(seed: u64, paths: usize, pilots: usize, snr_db: f64) -> Case {
    let sys = SystemConfig {
        subcarriers: 32,
        rx: UpaSize::new(4, 4),
        tx: UpaSize::new(2, 2),
        paths,
        common_paths: paths,
        angle_mode: AngleMode::OnGrid,
        delay_min_s: 0.0,
        delay_max_s: 1e-9,
        ..SystemConfig::paper()
    };
    let grid = GridSpec::new(4, 2, 2);
    let train = TrainingConfig { streams: 12, subframes: 4, pilot_subcarriers: pilots, rf_chains: None, share_beams: false };
    make_case(sys, grid, &train, seed, snr_db)
}

fn make_case(sys: SystemConfig, grid: GridSpec, train: &TrainingConfig, seed: u64, snr_db: f64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = ChannelGenerator::new(sys.clone(), grid).unwrap().draw(0, &mut rng);
    let beams = random_beams(&sys, train, &mut rng).unwrap();
    let noise = if snr_db.is_finite() { calibrate_noise(snr_db, &real, &beams, &sys).unwrap() } else { 0.0 };
    let obs = observe(&real, &beams, &sys, noise, &mut rng).unwrap();
    Case { sys, grid, real, obs }
}

fn mmv_residual(problem: &SensingProblem, angles: &[AngleTuple]) -> f64 {
    (0..problem.pilots())
        .map(|k| {
            let a = problem.angle_columns(k, angles);
            let q = least_squares(&a, &problem.y[k]).unwrap().solution;
            (&problem.y[k] - a * q).norm_squared()
        })
        .sum()
}

#[test]
fn ls_stage_picks_the_brute_force_minimizer() {
    for seed in 0..10 {
        let case = small_case(seed, 1, 4, f64::INFINITY);
        let problem = case.problem();
        let dict = HierarchicalDictionary { problem: &problem };
        let truth = case.real.support[0];
        let finest = problem.grid.columns(problem.finest());
        let prior: Vec<usize> = [truth, (truth + 17) % finest, (truth + 301) % finest, (truth + 1) % finest].into();
        let ls = mmv_ls(&problem.y, &dict, &prior, 1).unwrap();
        let brute = prior
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let ra = mmv_residual(&problem, &[problem.atom_angles(a)]);
                let rb = mmv_residual(&problem, &[problem.atom_angles(b)]);
                ra.total_cmp(&rb)
            })
            .unwrap();
        assert_eq!(ls.support, vec![brute]);
        assert_eq!(brute, truth);
        assert!(mmv_residual(&problem, &[problem.atom_angles(truth)]) < 1e-9 * problem.measurement_power());
    }
}

#[test]
fn ls_stage_is_idle_without_prior() {
    let case = small_case(1, 2, 4, 10.0);
    let problem = case.problem();
    let ls = mmv_ls(&problem.y, &HierarchicalDictionary { problem: &problem }, &[], 2).unwrap();
    assert!(ls.support.is_empty());
}

#[test]
fn ls_stage_on_true_support_is_genie_ls() {
    let case = small_case(2, 3, 4, 5.0);
    let problem = case.problem();
    let ls = mmv_ls(&problem.y, &HierarchicalDictionary { problem: &problem }, &case.real.support, 3).unwrap();
    let mut support = ls.support.clone();
    support.sort_unstable();
    assert_eq!(support, case.real.support);
    let angles: Vec<AngleTuple> = ls.support.iter().map(|&a| problem.atom_angles(a)).collect();
    for k in 0..problem.pilots() {
        let direct = least_squares(&problem.angle_columns(k, &angles), &problem.y[k]).unwrap().solution;
        assert!((&direct - &ls.coefficients[k]).norm() < 1e-12);
    }
}

fn unitary(n: usize, seed: u64) -> CMatrix {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    a.qr().q()
}

fn orthonormal_dictionary() -> DictionarySet {
    // Θ = T ⊗ P with unitary 4×4 factors is a unitary 16×16 matrix.
    let grid = GridSpec::new(2, 2, 1);
    let p = unitary(4, 1);
    let t = unitary(4, 2);
    let pilot = PilotDictionary {
        subcarrier: 1,
        delta: 0.0,
        array_rx: p.clone(),
        array_tx: t.clone(),
        rx_proj: p,
        tx_proj: t,
    };
    DictionarySet { level: 1, grid, pilots: vec![pilot] }
}

#[test]
fn somp_first_pick_on_orthonormal_dictionary() {
    let set = orthonormal_dictionary();
    let dict = FlatDictionary(&set);
    let y = vec![set.pilots[0].column(7) * C64::from(5.0)];
    let out = mmv_cs_somp(&y, &dict, 0.0, 4).unwrap();
    assert_eq!(out.support.first(), Some(&7));
    assert!(out.residuals[0].norm() < 1e-12);
    let zero = mmv_cs_somp(&[CVector::zeros(16)], &dict, 0.0, 4).unwrap();
    assert!(zero.support.is_empty());
}

#[test]
fn somp_recovers_two_paths_and_matches_correlation_ranking() {
    let sys = SystemConfig {
        subcarriers: 32,
        rx: UpaSize::new(2, 2),
        tx: UpaSize::new(2, 2),
        paths: 2,
        common_paths: 2,
        angle_mode: AngleMode::OnGrid,
        ..SystemConfig::paper()
    };
    let grid = GridSpec::new(2, 2, 1);
    let train = TrainingConfig { streams: 8, subframes: 4, pilot_subcarriers: 4, rf_chains: None, share_beams: false };
    for seed in 0..20 {
        let case = make_case(sys.clone(), grid, &train, seed, f64::INFINITY);
        let problem = case.problem();
        assert!(problem.coarse.columns() == 16);
        let dict = FlatDictionary(&problem.coarse);
        let out = mmv_cs_somp(&problem.y, &dict, 0.0, 2).unwrap();
        let dense: Vec<CMatrix> = problem.coarse.pilots.iter().map(|p| p.theta().unwrap()).collect();
        let score = |j: usize| dense.iter().zip(&problem.y).map(|(t, y)| t.column(j).dotc(y).norm_sqr()).sum::<f64>();
        let best = (0..dense[0].ncols()).rev().max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
        assert_eq!(out.support[0], best, "seed {seed}");
        let mut got = out.support.clone();
        got.sort_unstable();
        assert_eq!(got, case.real.support, "seed {seed}");
    }
}

#[test]
fn somp_residual_stays_orthogonal_to_selection() {
    let case = small_case(3, 4, 4, 0.0);
    let problem = case.problem();
    let dict = FlatDictionary(&problem.coarse);
    for t in 1..=6 {
        let out = mmv_cs_somp(&problem.y, &dict, 0.0, t).unwrap();
        for k in 0..problem.pilots() {
            let cols = problem.coarse.pilots[k].columns(&out.support);
            let c = cols.ad_mul(&out.residuals[k]);
            assert!(c.iter().all(|v| v.norm() < 1e-8));
        }
    }
}

#[test]
fn somp_selection_ignores_measurement_scale() {
    let case = small_case(4, 3, 4, 10.0);
    let problem = case.problem();
    let dict = FlatDictionary(&problem.coarse);
    let base = mmv_cs_somp(&problem.y, &dict, 0.0, 6).unwrap();
    for s in [1e-6, 3.0, 1e5] {
        let scaled: Vec<CVector> = problem.y.iter().map(|v| v * C64::from(s)).collect();
        assert_eq!(mmv_cs_somp(&scaled, &dict, 0.0, 6).unwrap().support, base.support);
    }
}

#[test]
fn refinement_is_exact_for_a_matched_single_path() {
    for seed in 0..5 {
        let case = small_case(seed, 1, 32, f64::INFINITY);
        let problem = case.problem();
        let path = &case.real.paths[0];
        let out = refine(&problem, &[path.angles], true, false).unwrap();
        let PathGains::Refined(fit) = &out.estimate.gains else { panic!("expected refined gains") };
        let z = C64::from_polar(1.0, -2.0 * PI * case.sys.bandwidth_hz / 32.0 * path.delay_s);
        assert!((fit[0].generator - z).norm() < 1e-12);
        assert!((fit[0].delay_s - path.delay_s).abs() <= 1e-12 * path.delay_s);
        assert!((fit[0].gain - path.gain).norm() <= 1e-10 * path.gain.norm());
        assert!(case.nmse(&EstimateResult {
            support: case.real.support.clone(),
            coefficients: out.coefficients.clone(),
            estimate: out.estimate.clone(),
            diagnostics: Diagnostics::default(),
        }) < 1e-20);
    }
}

#[test]
fn sequential_search_agrees_with_exhaustive_cell_search() {
    for seed in 0..10 {
        let case = small_case(seed, 1, 4, f64::INFINITY);
        let problem = case.problem();
        let m = problem.finest();
        let truth = GridIndex::from_flat(case.real.support[0], &problem.grid, m);
        let start = truth.ancestor(&problem.grid, m, 1);
        let found = sequential_search(&problem, &problem.y, start);
        assert_eq!(found.index, truth, "seed {seed}");
        let subs = problem.grid.subs();
        assert_eq!(found.evaluations, (m - 1) * subs.iter().sum::<usize>());

        let score = |idx: GridIndex| {
            let a = idx.angles(&problem.grid, m);
            (0..problem.pilots()).map(|k| problem.angle_column(k, &a).dotc(&problem.y[k]).norm_sqr()).sum::<f64>()
        };
        let exhaustive = (0..problem.grid.columns(m))
            .map(|j| GridIndex::from_flat(j, &problem.grid, m))
            .filter(|i| i.ancestor(&problem.grid, m, 1) == start)
            .max_by(|&a, &b| score(a).total_cmp(&score(b)))
            .unwrap();
        assert_eq!(exhaustive, truth);
    }
}

#[test]
fn sequential_search_without_levels_is_identity() {
    let mut case = small_case(5, 1, 4, f64::INFINITY);
    case.grid = GridSpec::new(4, 2, 1);
    let problem = case.problem();
    let start = GridIndex::from_flat(37, &problem.grid, 1);
    let found = sequential_search(&problem, &problem.y, start);
    assert_eq!(found.index, start);
    assert_eq!(found.evaluations, 0);
}

#[test]
fn fista_never_ends_above_its_start() {
    for seed in 0..100 {
        let case = small_case(seed, 3, 4, 0.0);
        let problem = case.problem();
        let lambda = 0.3 * case.obs.noise_variance.sqrt() * (48f64).sqrt();
        let lasso = GroupLasso::new(&problem.coarse, &problem.y, vec![lambda; problem.coarse.columns()]);
        let out = run_fista(&lasso, lasso.zeros(), 200, 1e-8);
        assert!(out.final_objective <= out.initial_objective, "seed {seed}");
    }
}

#[test]
fn fista_solution_is_a_proximal_fixed_point() {
    let case = small_case(8, 3, 4, 10.0);
    let problem = case.problem();
    let lambda = 0.3 * case.obs.noise_variance.sqrt() * (48f64).sqrt();
    let lasso = GroupLasso::new(&problem.coarse, &problem.y, vec![lambda; problem.coarse.columns()]);
    let out = run_fista(&lasso, lasso.zeros(), 5000, 0.0);
    let again = lasso.step(&out.x);
    let diff: f64 = again.iter().zip(&out.x).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
    let size: f64 = out.x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    assert!(diff <= 1e-6 * size, "{diff} vs {size}");
}

#[test]
fn huge_lambda_annihilates_the_estimate() {
    let case = small_case(9, 3, 4, 10.0);
    let problem = case.problem();
    let params = EstimatorParams { lambda: Some(1e30), ..EstimatorParams::for_system(&case.sys) };
    let res = mfista_estimate(&problem, &[], &params).unwrap();
    assert!(res.support.is_empty());
    assert!(res.channels(&case.sys).iter().all(|h| h.norm() == 0.0));
}

#[test]
fn empty_prior_reduces_two_stage_to_its_cs_branch() {
    for seed in 0..5 {
        let case = small_case(seed, 3, 4, 5.0);
        let problem = case.problem();
        let params = EstimatorParams::for_system(&case.sys);
        let ts = ts_estimate(&problem, &[], &params).unwrap();
        let cs = cs_only_estimate(&problem, &params).unwrap();
        assert_eq!(ts.support, cs.support);
        assert_eq!(ts.coefficients, cs.coefficients);
        assert_eq!(ts.estimate, cs.estimate);
    }
}

#[test]
fn support_never_exceeds_multiplier_bound() {
    for seed in 0..5 {
        let sys = SystemConfig { angle_mode: AngleMode::OffGrid, ..SystemConfig::desk() };
        let case = make_case(sys, GridSpec::new(8, 4, 2), &TrainingConfig::desk(), seed, -5.0);
        let problem = case.problem();
        let params = EstimatorParams::for_system(&case.sys);
        assert_eq!(params.support_size(), 16);
        for prior in [vec![], case.real.support.clone()] {
            assert!(ts_estimate(&problem, &prior, &params).unwrap().support.len() <= 16);
            assert!(mfista_estimate(&problem, &prior, &params).unwrap().support.len() <= 16);
        }
    }
}

#[test]
fn genie_is_exact_without_noise() {
    for seed in 0..5 {
        let base = small_case(seed, 4, 4, f64::INFINITY);
        let sys = SystemConfig { angle_mode: AngleMode::OffGrid, ..base.sys };
        let train = TrainingConfig { streams: 12, subframes: 4, pilot_subcarriers: 4, rf_chains: None, share_beams: false };
        let case = make_case(sys, base.grid, &train, seed, f64::INFINITY);
        let problem = case.problem();
        let angles: Vec<AngleTuple> = case.real.paths.iter().map(|p| p.angles).collect();
        assert!(case.nmse(&genie_ls(&problem, &angles, true).unwrap()) < 1e-9);
    }
}

fn static_frames(frames: usize, snr_db: f64) -> (SystemConfig, GridSpec, Vec<FrameInput>) {
    let sys = SystemConfig { common_paths: 4, angle_mode: AngleMode::OnGrid, ..SystemConfig::desk() };
    let grid = GridSpec::new(8, 4, 2);
    let train = TrainingConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let gen = ChannelGenerator::new(sys.clone(), grid).unwrap();
    let mut real = gen.draw(0, &mut rng);
    let mut out = Vec::new();
    for _ in 0..frames {
        let beams = random_beams(&sys, &train, &mut rng).unwrap();
        let noise = calibrate_noise(snr_db, &real, &beams, &sys).unwrap();
        let observation = observe(&real, &beams, &sys, noise, &mut rng).unwrap();
        out.push(FrameInput { observation, truth: Some(real.clone()) });
        real = gen.evolve(&real, &mut rng);
    }
    (sys, grid, out)
}

#[test]
fn static_channel_tracks_without_resets() {
    let (sys, grid, frames) = static_frames(50, 30.0);
    let params = EstimatorParams { reset_threshold: Some(0.01), ..EstimatorParams::for_system(&sys) };
    let out = track_protocol(&sys, grid, &frames, EstimatorKind::Ts, PriorSource::Tracked, &params).unwrap();
    assert!(out.initial[0]);
    assert!(out.initial[1..].iter().all(|&i| !i));
    assert!(out.resets.is_empty(), "{:?}", out.resets);
    let paths = |f: usize| frames[f].truth.as_ref().map(|t| t.paths.clone());
    assert_eq!(paths(0), paths(49));
}

#[test]
fn zero_threshold_resets_every_tracked_frame() {
    let (sys, grid, frames) = static_frames(5, 10.0);
    let params = EstimatorParams { reset_threshold: Some(0.0), ..EstimatorParams::for_system(&sys) };
    for kind in [EstimatorKind::Ts, EstimatorKind::MFista] {
        let out = track_protocol(&sys, grid, &frames, kind, PriorSource::Tracked, &params).unwrap();
        let reset: BTreeSet<usize> = out.resets.iter().map(|r| r.frame).collect();
        assert_eq!(reset, (1..5).collect());
        assert!(out.initial.iter().all(|&i| i));
    }
}
