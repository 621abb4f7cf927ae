use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setback::cluster::{kmeans, nearest, select_k, wss_curve, wss_of, KMeansParams};
use setback::synth::{gaussian_blobs, oracle_kmeans};

fn random_instance(seed: u64) -> (Vec<Vec<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    let dim = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let points = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    (points, k)
}

#[test]
fn best_of_twenty_matches_exhaustive_optimum() {
    let mut misses = Vec::new();
    for seed in 0..100 {
        let (points, k) = random_instance(seed);
        let model = kmeans(&points, &KMeansParams::new(k, 20, seed)).unwrap();
        let oracle = oracle_kmeans(&points, k).unwrap();
        if (model.wss - oracle.wss).abs() > 1e-9 {
            misses.push((seed, model.wss, oracle.wss));
        }
    }
    assert!(misses.len() <= 1, "{misses:?}");
}

#[test]
fn elbow_recovers_three_blobs() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sd = 0.05;
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..24).map(|h| if h % 3 == c { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1)).collect())
            .collect();
        let points = gaussian_blobs(&centers, 20, sd, seed);
        let models = wss_curve(&points, 2..=10, 10, seed).unwrap();
        let curve: BTreeMap<usize, f64> = models.iter().map(|(&k, m)| (k, m.wss)).collect();
        if select_k(&curve, None).unwrap().k == 3 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deterministic_and_nearest_fixpoint(seed in 0u64..10_000, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let params = KMeansParams::new(k, 5, seed);
        let a = kmeans(&points, &params).unwrap();
        let b = kmeans(&points, &params).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.wss.to_bits(), b.wss.to_bits());
        for (p, &label) in points.iter().zip(&a.assignments) {
            let (best, d) = nearest(p, &a.centroids);
            let own: f64 = p.iter().zip(&a.centroids[label]).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(best == label || own <= d + 1e-12);
        }
        prop_assert!(a.cluster_sizes().iter().all(|&s| s > 0));
        prop_assert!((wss_of(&points, &a.centroids, &a.assignments) - a.wss).abs() < 1e-9);
    }

    #[test]
    fn labels_ordered_by_descending_peak(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..20).map(|_| (0..24).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let m = kmeans(&points, &KMeansParams::new(3, 4, seed)).unwrap();
        let peaks: Vec<f64> = m.centroids.iter().map(|c| c.iter().copied().fold(f64::MIN, f64::max)).collect();
        prop_assert!(peaks.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn duplicate_points_never_leave_a_cluster_empty() {
    let mut points = vec![vec![0.0, 0.0]; 6];
    points.push(vec![5.0, 5.0]);
    let m = kmeans(&points, &KMeansParams::new(3, 3, 1)).unwrap();
    assert!(m.cluster_sizes().iter().all(|&s| s > 0));
    assert_eq!(m.wss, 0.0);
}
