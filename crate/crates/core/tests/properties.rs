use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, Quaternion, UnitQuaternion, Vector3};
use proptest::prelude::*;

use seqbo_core::acquisition::{select_batch, PortfolioProblem};
use seqbo_core::encoding::EncodingMatrix;
use seqbo_core::gp::{GpModel, PriorMean};
use seqbo_core::kernels::{gram, Channel, Kernel, Point};
use seqbo_core::nsga::{dominates, non_dominated_sort};
use seqbo_core::plm::{LikelihoodProvider, Pssm};
use seqbo_core::seq::{MutationSet, Residue, Sequence, NUM_RESIDUES};
use seqbo_core::structure::align;

const PARENTAL: &str = "EVQLVESG";

fn sequences(n: usize) -> impl Strategy<Value = Vec<Sequence>> {
    prop::collection::vec(prop::collection::vec(0..NUM_RESIDUES, PARENTAL.len()), 2..=n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| Sequence::new(r.into_iter().map(|i| Residue::from_index(i).unwrap()).collect()))
            .collect()
    })
}

fn point(parental: &Arc<Sequence>, s: &Sequence) -> Point {
    let onehot = EncodingMatrix::one_hot().encode(s);
    let blosum = EncodingMatrix::blosum62().encode(s);
    Point::new(MutationSet::diff(parental, s).unwrap())
        .with_channel(Channel::OneHot, onehot)
        .with_channel(Channel::Blosum, blosum)
}

fn points(seqs: &[Sequence]) -> Vec<Point> {
    let parental = Arc::new(PARENTAL.parse::<Sequence>().unwrap());
    seqs.iter().map(|s| point(&parental, s)).collect()
}

fn kernels() -> Vec<Kernel> {
    vec![
        Kernel::tanimoto(Channel::OneHot),
        Kernel::matern52(vec![Channel::Blosum]),
        Kernel::sqexp(vec![Channel::OneHot]),
        Kernel::weighted_sum(vec![Kernel::tanimoto(Channel::OneHot), Kernel::matern52(vec![Channel::Blosum])]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_matrices_are_positive_semidefinite(seqs in sequences(12)) {
        let pts = points(&seqs);
        let n = pts.len();
        for k in kernels() {
            let g = gram(&k, &pts).unwrap();
            let m = DMatrix::from_row_slice(n, n, &g.values);
            prop_assert!((&m - m.transpose()).abs().max() < 1e-12);
            let trace = m.trace();
            let min = m.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-9 * trace.max(1.0), "{k:?}: {min}");
        }
    }

    #[test]
    fn posterior_std_is_nonnegative(seqs in sequences(10), queries in sequences(6), ys in prop::collection::vec(-3.0..3.0f64, 10)) {
        let pts = points(&seqs);
        let targets = &ys[..pts.len()];
        for k in kernels() {
            let gp = GpModel::condition(k, PriorMean::Constant { beta: 0.0 }, 1e-3, &pts, targets).unwrap();
            for q in points(&queries).iter().chain(&pts) {
                let p = gp.predict(q).unwrap();
                prop_assert!(p.std >= 0.0 && p.mean.is_finite());
            }
        }
    }

    #[test]
    fn sort_partitions_by_domination(objs in prop::collection::vec(prop::collection::vec(0..4u8, 2..=3), 1..30)) {
        let m = objs[0].len();
        let objs: Vec<Vec<f64>> = objs.into_iter().map(|o| o.into_iter().take(m).map(f64::from).collect()).collect();
        prop_assume!(objs.iter().all(|o| o.len() == m));
        let fronts = non_dominated_sort(&objs);
        let mut all: Vec<usize> = fronts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..objs.len()).collect::<Vec<_>>());
        // brute force: peel off the non-dominated set repeatedly
        let mut left: BTreeSet<usize> = (0..objs.len()).collect();
        for front in &fronts {
            let expected: BTreeSet<usize> = left
                .iter()
                .copied()
                .filter(|&i| !left.iter().any(|&j| dominates(&objs[j], &objs[i])))
                .collect();
            prop_assert_eq!(front.iter().copied().collect::<BTreeSet<_>>(), expected.clone());
            left = &left - &expected;
        }
        prop_assert!(left.is_empty());
    }

    #[test]
    fn batches_are_distinct_of_requested_size(
        pts in prop::collection::vec((-2.0..2.0f64, 0.0..1.5f64), 1..25),
        q in 1usize..25,
    ) {
        prop_assume!(q <= pts.len());
        let problem = PortfolioProblem::new(pts.into_iter().map(|(a, b)| [a, b]).collect()).unwrap();
        let sel = select_batch(&problem, q).unwrap();
        prop_assert_eq!(sel.selected.len(), q);
        prop_assert_eq!(sel.selected.iter().collect::<BTreeSet<_>>().len(), q);
        prop_assert!(sel.selected.iter().all(|&i| i < problem.len()));
    }

    #[test]
    fn allocation_ignores_common_likelihood_scale(
        pts in prop::collection::vec((-2.0..2.0f64, 0.0..1.5f64, 0.05..1.0f64), 2..15),
        c in 0.05..1.0f64,
    ) {
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let lik: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let scaled: Vec<f64> = lik.iter().map(|w| c * w).collect();
        let a = select_batch(&PortfolioProblem::new(coords.clone()).unwrap().with_likelihoods(lik).unwrap(), 1).unwrap();
        let b = select_batch(&PortfolioProblem::new(coords).unwrap().with_likelihoods(scaled).unwrap(), 1).unwrap();
        for (x, y) in a.solution.z.iter().zip(&b.solution.z) {
            prop_assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", a.solution.z, b.solution.z);
        }
    }

    #[test]
    fn pseudo_likelihood_in_unit_interval(
        raw in prop::collection::vec(prop::collection::vec(0.0..1.0f64, NUM_RESIDUES), PARENTAL.len()),
        seqs in sequences(5),
    ) {
        let rows: Vec<[f64; NUM_RESIDUES]> = raw
            .iter()
            .map(|r| {
                let total: f64 = r.iter().sum::<f64>() + 1e-9 * NUM_RESIDUES as f64;
                core::array::from_fn(|k| (r[k] + 1e-9) / total)
            })
            .collect();
        let p = LikelihoodProvider::from_pssm(Pssm::new(rows).unwrap());
        for s in &seqs {
            let v = p.pseudo_likelihood(s).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0, "{v}");
        }
    }

    #[test]
    fn alignment_recovers_rigid_motion(
        coords in prop::collection::vec(-10.0..10.0f64, 12..60),
        q in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        t in (-20.0..20.0f64, -20.0..20.0f64, -20.0..20.0f64),
    ) {
        let n = coords.len() / 3;
        let reference = &coords[..3 * n];
        let quat = Quaternion::new(q.0, q.1, q.2, q.3);
        prop_assume!(quat.norm() > 0.1);
        let rot = UnitQuaternion::from_quaternion(quat);
        let shift = Vector3::new(t.0, t.1, t.2);
        let mobile: Vec<f64> = reference
            .chunks_exact(3)
            .flat_map(|c| {
                let p = rot * Vector3::new(c[0], c[1], c[2]) + shift;
                [p.x, p.y, p.z]
            })
            .collect();
        let Ok(a) = align(&mobile, reference) else {
            // degenerate (collinear) draws are rejected by the aligner
            return Ok(());
        };
        prop_assert!(a.rmsd < 1e-8, "{}", a.rmsd);
        for (x, y) in a.coords.iter().zip(reference) {
            prop_assert!((x - y).abs() < 1e-7);
        }
    }
}
