mod common;

use std::collections::BTreeSet;

use common::{centered, gram, masked_alignment, masks, neighborhoods, relabel, rng, uniform_points};
use lama_core::alignment::{self, build_masks, local_alignment};
use lama_core::kernel::{CenteredGram, ExponentMode};
use lama_core::query::{tau_mma, HypotheticalMode};
use lama_core::{KernelMatrix, Label, LabeledSet, NeighborhoodIndex, NeighborhoodOptions, SquaredDistances};
use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

fn set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

fn pair_set(v: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    v.iter().copied().collect()
}

/// Compares every intermediate of the library against the brute-force
/// oracle on one instance.
fn check_instance(x: &DMatrix<f64>, k: usize, inliers: &BTreeSet<usize>, outliers: &BTreeSet<usize>, gamma: f64) {
    let n = x.nrows();
    let nb = neighborhoods(x, k);
    let idx = NeighborhoodIndex::build(x, NeighborhoodOptions::new(k)).unwrap();
    for i in 0..n {
        assert_eq!(idx.nn(i), nb.nn_order[i].as_slice(), "NN({i})");
        assert_eq!(set(idx.rnn(i)), nb.rnn[i], "RNN({i})");
        assert_eq!(set(idx.snn(i)), nb.snn[i], "SNN({i})");
    }

    let labeled = LabeledSet::new(inliers.iter().copied(), outliers.iter().copied()).unwrap();
    let pools = alignment::relabel(&labeled, &idx);
    let y = relabel(&nb, inliers, outliers);
    for (i, expected) in y.iter().enumerate() {
        assert_eq!(pools.relabeled(i), *expected, "y'({i})");
    }

    let mask = build_masks(&pools, &idx);
    let (m_in, m_out) = masks(&nb, &y, inliers, outliers);
    assert_eq!(pair_set(&mask.inlier_pairs), m_in);
    assert_eq!(pair_set(&mask.outlier_pairs), m_out);

    let union: BTreeSet<(usize, usize)> = m_in.union(&m_out).copied().collect();
    if union.is_empty() {
        return;
    }
    let kc = centered(&gram(x, gamma));
    let expected = masked_alignment(&kc, &y, &union);
    let km = KernelMatrix::gram(x, gamma).unwrap().center().unwrap();
    let full = local_alignment(&km, &pools, &mask).unwrap();
    let dist = SquaredDistances::from_points(x);
    let fast = alignment::alignment_at(&dist, gamma, ExponentMode::Squared, &pools, &mask).unwrap();
    // M_in and M_out may share a pair only if an id is both a labeled
    // inlier and outlier, which LabeledSet rules out.
    assert!(m_in.is_disjoint(&m_out));
    assert!((full - expected).abs() < 1e-9, "full path {full} vs {expected}");
    assert!((fast - expected).abs() < 1e-9, "fast path {fast} vs {expected}");
}

#[test]
fn fifty_random_instances_match_brute_force() {
    let mut r = rng(99);
    for _ in 0..50 {
        let n = r.random_range(5..=30);
        let dims = r.random_range(1..=3);
        let x = uniform_points(&mut r, n, dims);
        let k = r.random_range(1..=n.min(8));
        let labeled = r.random_range(2..=n.min(10));
        let ids = index::sample(&mut r, n, labeled).into_vec();
        let split = r.random_range(1..labeled);
        let inliers = set(&ids[..split]);
        let outliers = set(&ids[split..]);
        let gamma = 10f64.powf(r.random_range(-1.0..1.5));
        check_instance(&x, k, &inliers, &outliers, gamma);
    }
}

#[test]
fn ties_and_duplicates_match_brute_force() {
    let mut r = rng(4);
    for _ in 0..20 {
        let n = r.random_range(6..=20);
        // Integer grid coordinates produce many distance ties and duplicates.
        let x = DMatrix::from_fn(n, 2, |_, _| r.random_range(0..4) as f64);
        let k = r.random_range(1..=n.min(6));
        let inliers = set(&[0, 1]);
        let outliers = set(&[2]);
        check_instance(&x, k, &inliers, &outliers, 0.7);
    }
}

/// Two small clusters, a point between them and one far point; two
/// labeled inliers and one labeled outlier with k = 2.
fn eight_points() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        8,
        2,
        &[
            0.0, 0.0, //
            1.0, 0.0, //
            0.0, 1.0, //
            1.0, 1.0, //
            5.0, 5.0, //
            6.0, 5.0, //
            3.0, 0.5, //
            10.0, 10.0,
        ],
    )
}

#[test]
fn eight_point_instance_by_hand() {
    let x = eight_points();
    let idx = NeighborhoodIndex::build(&x, NeighborhoodOptions::new(2)).unwrap();
    let expected_nn = [[0, 1], [1, 0], [2, 0], [3, 1], [4, 5], [5, 4], [6, 1], [7, 5]];
    for (i, nn) in expected_nn.iter().enumerate() {
        assert_eq!(idx.nn(i), nn);
    }
    assert_eq!(idx.rnn(7), &[7]);
    assert_eq!(idx.snn(7), &[7]);

    let labeled = LabeledSet::new([0, 4], [7]).unwrap();
    let pools = alignment::relabel(&labeled, &idx);
    assert_eq!(pools.relabeled_inliers(), vec![0, 1, 4, 5]);
    assert_eq!(pools.relabeled_outliers(), vec![7]);
    assert_eq!(pools.remaining(), vec![2, 3, 6]);

    let mask = build_masks(&pools, &idx);
    assert_eq!(mask.inlier_pairs, vec![(0, 0), (0, 1), (4, 4), (4, 5)]);
    assert_eq!(mask.outlier_pairs, vec![(7, 5), (7, 7)]);

    check_instance(&x, 2, &set(&[0, 4]), &set(&[7]), 1.0);
}

/// From-scratch tau: rebuild y' and masks with the hypothesis applied.
fn brute_tau(
    x: &DMatrix<f64>,
    k: usize,
    inliers: &BTreeSet<usize>,
    outliers: &BTreeSet<usize>,
    cand: usize,
    gamma: f64,
    raw: bool,
) -> f64 {
    let nb = neighborhoods(x, k);
    let kc = centered(&gram(x, gamma));
    let y = relabel(&nb, inliers, outliers);
    let (m_in, m_out) = masks(&nb, &y, inliers, outliers);
    let base: BTreeSet<_> = m_in.union(&m_out).copied().collect();
    let a = masked_alignment(&kc, &y, &base);

    let hypothetical = |label: Label| {
        let mut y2 = y.clone();
        y2[cand] = Some(label);
        let (mut li, mut lo) = (inliers.clone(), outliers.clone());
        if raw {
            match label {
                Label::Inlier => li.insert(cand),
                Label::Outlier => lo.insert(cand),
            };
        }
        let (mi, mo) = masks(&nb, &y2, &li, &lo);
        let union: BTreeSet<_> = mi.union(&mo).copied().collect();
        masked_alignment(&kc, &y2, &union)
    };
    let a_in = hypothetical(Label::Inlier);
    let a_out = hypothetical(Label::Outlier);
    (a - a_in).abs().min((a - a_out).abs())
}

#[test]
fn tau_matches_from_scratch_recomputation() {
    let x = eight_points();
    let (inliers, outliers) = (set(&[0, 4]), set(&[7]));
    let idx = NeighborhoodIndex::build(&x, NeighborhoodOptions::new(2)).unwrap();
    let labeled = LabeledSet::new([0, 4], [7]).unwrap();
    let pools = alignment::relabel(&labeled, &idx);
    let mask = build_masks(&pools, &idx);
    let dist = SquaredDistances::from_points(&x);
    let gamma = 0.3;
    let cg = CenteredGram::new(&dist, gamma, ExponentMode::Squared).unwrap();
    let a_local = alignment::masked_alignment(|i, j| cg.entry(i, j), &pools, &mask).unwrap();

    for cand in [1, 2, 3, 5, 6] {
        for (mode, raw) in [(HypotheticalMode::RawRows, true), (HypotheticalMode::PoolOnly, false)] {
            let ours = tau_mma(cand, &pools, a_local, &idx, &cg, mode).unwrap();
            let expected = brute_tau(&x, 2, &inliers, &outliers, cand, gamma, raw);
            assert!(
                (ours - expected).abs() < 1e-9,
                "candidate {cand} {mode:?}: {ours} vs {expected}"
            );
            assert!(ours >= 0.0);
        }
    }
}

#[test]
fn relabeled_inlier_has_zero_tau_without_raw_rows() {
    let x = eight_points();
    let idx = NeighborhoodIndex::build(&x, NeighborhoodOptions::new(2)).unwrap();
    let pools = alignment::relabel(&LabeledSet::new([0, 4], [7]).unwrap(), &idx);
    let mask = build_masks(&pools, &idx);
    let dist = SquaredDistances::from_points(&x);
    let cg = CenteredGram::new(&dist, 1.0, ExponentMode::Squared).unwrap();
    let a_local = alignment::masked_alignment(|i, j| cg.entry(i, j), &pools, &mask).unwrap();
    // 1 and 5 are already in L_in'.
    for cand in [1, 5] {
        let tau = tau_mma(cand, &pools, a_local, &idx, &cg, HypotheticalMode::PoolOnly).unwrap();
        assert_eq!(tau, 0.0);
    }
}
