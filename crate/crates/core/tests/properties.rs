use std::collections::HashSet;

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;
use pcnet_core::analysis::{self, convex_hull_volume};
use pcnet_core::dataset::format_f64;
use pcnet_core::ensemble::{self, CentralStateKind, ExperimentConfig};
use pcnet_core::maps::{self, PhaseCovMap};
use pcnet_core::rules::{Driver, RuleKind};
use pcnet_core::symstate::dense;
use pcnet_core::{CouplingGraph, CouplingKind, GateParams, MatchingCatalog, SymmetricState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn catalog(n: usize, kind: CouplingKind) -> MatchingCatalog {
    MatchingCatalog::enumerate(&CouplingGraph::new(n, kind).unwrap()).unwrap()
}

fn gate_strategy() -> impl Strategy<Value = GateParams> {
    (0.0..std::f64::consts::PI, -3.2..3.2f64, -3.2..3.2f64).prop_map(|(t, p, o)| GateParams::new(t, p, o))
}

type Layers = Vec<Vec<(usize, usize)>>;

fn random_state(n: usize, depth: usize, gate: &GateParams, seed: u64) -> (SymmetricState, Vec<f64>, Layers) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pops: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let cat = catalog(n, CouplingKind::Complete);
    let layers: Layers = (0..depth).map(|_| cat.random(&mut rng).pairs).collect();
    let mut s = SymmetricState::product(&pops).unwrap();
    for l in &layers {
        s.apply_layer(l, gate).unwrap();
    }
    (s, pops, layers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_evolution_matches_dense(gate in gate_strategy(), seed in any::<u64>(), n in prop::sample::select(vec![4usize, 6])) {
        let (s, pops, layers) = random_state(n, 12, &gate, seed);
        let oracle = dense::dense_oracle_evolve(&pops, &layers, &gate).unwrap();
        let diff = s.to_dense().iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12, "diff {diff}");
        for q in 0..n {
            prop_assert!(dense::single_qubit_coherence(&oracle, n, q) <= 1e-12);
        }
    }

    #[test]
    fn evolution_preserves_state_invariants(gate in gate_strategy(), seed in any::<u64>(), n in prop::sample::select(vec![6usize, 8])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pops: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s0 = SymmetricState::product(&pops).unwrap();
        let (s, _, _) = random_state(n, 15, &gate, seed);
        prop_assert!((s.trace() - 1.0).abs() <= 1e-12);
        let charge0: f64 = s0.bloch_z().z.iter().sum();
        let charge: f64 = s.bloch_z().z.iter().sum();
        prop_assert!((charge - charge0).abs() <= 1e-10);
        prop_assert!(s.hermiticity_error() <= 1e-13);
        prop_assert!(s.min_eigenvalue() >= -1e-12);
        for (a, b) in s.subspace_purities().iter().zip(s0.subspace_purities()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn pair_prediction_matches_applied_gate(gate in gate_strategy(), seed in any::<u64>()) {
        let (s, _, _) = random_state(6, 6, &gate, seed);
        for (a, b) in [(0usize, 3usize), (2, 5), (4, 1)] {
            let pair = s.pair_reduced(a, b).unwrap();
            let mut t = s.clone();
            t.apply_pair_gate(a, b, &gate).unwrap();
            for q in [a, b] {
                let predicted = maps::predicted_z(&pair, q, &gate);
                prop_assert!((predicted - t.qubit_bloch_z(q).unwrap()).abs() <= 1e-12);
                let r = if q == a { b } else { a };
                let z_prev = s.qubit_bloch_z(q).unwrap();
                let tau = maps::propagator_from_z(z_prev, predicted, &gate).tau_z;
                let coupling = maps::signed_coupling(&pair, q, &gate);
                let z_r = s.qubit_bloch_z(r).unwrap();
                prop_assert!((tau - maps::tau_from_pair(z_r, coupling, &gate)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cp_checks_agree(lz in 0.0..1.0f64, tau in -1.2..1.2f64) {
        let map = PhaseCovMap::z_only(lz, tau);
        let (first, second) = maps::general_cp_conditions(&map);
        prop_assert_eq!(maps::cp_check(&map).is_cp, first && second);
    }

    #[test]
    fn collision_relaxation_matches_two_qubit_simulation(theta in 0.01..1.5f64, z0 in -1.0..1.0f64, zbar in -1.0..1.0f64) {
        let gate = GateParams::new(theta, 0.0, 0.0);
        let mut z = z0;
        for k in 1..=20u32 {
            let mut s = SymmetricState::product(&[(1.0 - z) / 2.0, (1.0 - zbar) / 2.0]).unwrap();
            s.apply_pair_gate(0, 1, &gate).unwrap();
            z = s.qubit_bloch_z(0).unwrap();
            prop_assert!((z - maps::collision_relaxation(z0, zbar, &gate, k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn hull_volume_invariant_under_rigid_motion(seed in any::<u64>(), axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), angle in 0.0..6.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let v0 = convex_hull_volume(&pts).unwrap().volume;
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let mut moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| {
                let r = rot * Vector3::new(p[0], p[1], p[2]) + Vector3::new(3.0, -2.0, 0.5);
                vec![r.x, r.y, r.z]
            })
            .collect();
        moved.reverse();
        let v1 = convex_hull_volume(&moved).unwrap().volume;
        prop_assert!((v0 - v1).abs() <= 1e-9 * v0);
    }

    #[test]
    fn moving_average_commutes_with_affine_maps(series in prop::collection::vec(-10.0..10.0f64, 5..40), a in -3.0..3.0f64, b in -5.0..5.0f64, w in 1usize..5) {
        let direct: Vec<f64> = analysis::moving_average(&series, w).unwrap().iter().map(|m| a * m + b).collect();
        let mapped: Vec<f64> = series.iter().map(|x| a * x + b).collect();
        for (x, y) in direct.iter().zip(analysis::moving_average(&mapped, w).unwrap()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn csv_numbers_keep_twelve_digits(x in -1e6..1e6f64) {
        let back: f64 = format_f64(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-12 * x.abs().max(1e-300));
    }
}

#[test]
fn catalogs_hold_distinct_perfect_matchings() {
    for n in [4, 6, 8, 10] {
        for kind in [CouplingKind::Ring, CouplingKind::Circulant4, CouplingKind::Complete] {
            let cat = catalog(n, kind);
            let graph = cat.coupling().clone();
            let mut seen = HashSet::new();
            for m in cat.iter() {
                let mut covered: Vec<usize> = m.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
                covered.sort_unstable();
                assert_eq!(covered, (0..n).collect::<Vec<_>>());
                assert!(m.pairs.iter().all(|&(a, b)| graph.has_edge(a, b)));
                assert!(seen.insert(m.pairs.clone()));
                assert_eq!(cat.index_of(&m.pairs), Some(m.index));
            }
        }
        let odd: usize = (1..n).step_by(2).product();
        assert_eq!(catalog(n, CouplingKind::Complete).len(), odd);
    }
}

/// Facets from every point triple with all points on one side.
fn brute_force_hull(pts: &[Vector3<f64>]) -> f64 {
    let centre = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / pts.len() as f64;
    let mut vol = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let nrm = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
                let mut sign = 0.0;
                let mut facet = true;
                for (m, p) in pts.iter().enumerate() {
                    if m == i || m == j || m == k {
                        continue;
                    }
                    let s = nrm.dot(&(p - pts[i]));
                    if sign == 0.0 {
                        sign = s.signum();
                    } else if s.signum() != sign {
                        facet = false;
                        break;
                    }
                }
                if facet {
                    let d = (pts[i] - centre).dot(&(pts[j] - centre).cross(&(pts[k] - centre)));
                    vol += d.abs() / 6.0;
                }
            }
        }
    }
    vol
}

#[test]
fn hull_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for size in [20, 60, 1000] {
        let pts: Vec<Vector3<f64>> = (0..size)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.x, p.y, p.z]).collect();
        let ours = convex_hull_volume(&rows).unwrap().volume;
        let oracle = brute_force_hull(&pts);
        assert!((ours - oracle).abs() <= 1e-9 * oracle, "{size}: {ours} vs {oracle}");
    }
}

#[test]
fn simulation_is_deterministic_per_seed_and_trial() {
    let cfg = ExperimentConfig {
        n_qubits: 8,
        connectivity: CouplingKind::Circulant4,
        central_state: CentralStateKind::Cs2,
        ensemble_size: 3,
        total_layers: 30,
        seed: 123,
        workers: 2,
        ..Default::default()
    };
    for rule in RuleKind::ALL {
        let a = ensemble::simulate(&cfg, &Driver::Rule(rule)).unwrap();
        let b = ensemble::simulate(&cfg, &Driver::Rule(rule)).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"), "{rule}");
        assert_ne!(a[0].layers[10].z, a[1].layers[10].z);
    }
}

#[test]
fn product_state_has_no_pair_coherence() {
    let s = SymmetricState::product(&[0.2, 0.7, 0.4, 0.9]).unwrap();
    for p in s.all_pairs() {
        assert_eq!(p.coherence, Complex64::new(0.0, 0.0));
    }
}
