use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spml_core::losses::{compute, LossInput, LossKind, LossSpec};
use spml_core::math::DenseMatrix;

struct Case {
    conf: DenseMatrix,
    labels: Vec<usize>,
    pseudo: Vec<Vec<usize>>,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let c = rng.random_range(2..=10);
    let n = rng.random_range(1..=4);
    let conf = DenseMatrix::from_vec(
        n,
        c,
        (0..n * c).map(|_| rng.random_range(0.02..0.98)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let pseudo = labels
        .iter()
        .map(|&y| (0..c).filter(|&j| j != y && rng.random_bool(0.3)).collect())
        .collect();
    Case { conf, labels, pseudo }
}

fn value(spec: &LossSpec, conf: &DenseMatrix, case: &Case) -> f64 {
    compute(spec, &LossInput::new(conf, &case.labels).with_pseudo(&case.pseudo))
        .unwrap()
        .value
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    for _ in 0..100 {
        let case = random_case(&mut rng);
        for kind in LossKind::ALL {
            let spec = LossSpec::new(kind);
            let out = compute(&spec, &LossInput::new(&case.conf, &case.labels).with_pseudo(&case.pseudo))
                .unwrap();
            for idx in 0..case.conf.as_slice().len() {
                let mut plus = case.conf.clone();
                plus.as_mut_slice()[idx] += h;
                let mut minus = case.conf.clone();
                minus.as_mut_slice()[idx] -= h;
                let numeric = (value(&spec, &plus, &case) - value(&spec, &minus, &case)) / (2.0 * h);
                let analytic = out.grad.as_slice()[idx];
                let scale = analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    (analytic - numeric).abs() / scale <= 1e-6,
                    "{}: analytic {analytic} numeric {numeric}",
                    kind.name()
                );
            }
        }
    }
}

#[test]
fn sign_and_em_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let case = random_case(&mut rng);
        let c = case.conf.cols() as f64;
        for kind in LossKind::ALL {
            let v = value(&LossSpec::new(kind), &case.conf, &case);
            if kind == LossKind::Em {
                let alpha = LossSpec::new(kind).em_alpha;
                assert!(v >= -alpha * 2f64.ln() * (c - 1.0) / c - 1e-15, "EM {v}");
            } else {
                assert!(v >= 0.0, "{} negative: {v}", kind.name());
            }
        }
    }
}

#[test]
fn weighting_shrinks_negatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let case = random_case(&mut rng);
        if case.conf.cols() < 3 {
            continue;
        }
        let an = value(&LossSpec::new(LossKind::An), &case.conf, &case);
        let wan = value(&LossSpec::new(LossKind::Wan), &case.conf, &case);
        assert!(wan < an);
    }
}

#[test]
fn em_at_uniform_confidence() {
    // Entropy is maximal at 0.5, so the unknown classes contribute no gradient.
    let conf = DenseMatrix::from_rows(&[vec![0.7, 0.5, 0.5, 0.5]]).unwrap();
    let out = compute(&LossSpec::new(LossKind::Em), &LossInput::new(&conf, &[0])).unwrap();
    for j in 1..4 {
        assert!(out.grad.get(0, j).abs() < 1e-15);
    }
    let expected = (-(0.7f64.ln()) - 0.1 * 3.0 * 2f64.ln()) / 4.0;
    assert!((out.value - expected).abs() < 1e-15);
}

fn permute(case: &Case, perm: &[usize]) -> Case {
    let c = perm.len();
    let rows: Vec<Vec<f64>> = case
        .conf
        .iter_rows()
        .map(|row| {
            let mut out = vec![0.0; c];
            for (&to, &v) in perm.iter().zip(row) {
                out[to] = v;
            }
            out
        })
        .collect();
    Case {
        conf: DenseMatrix::from_rows(&rows).unwrap(),
        labels: case.labels.iter().map(|&y| perm[y]).collect(),
        pseudo: case
            .pseudo
            .iter()
            .map(|s| s.iter().map(|&j| perm[j]).collect())
            .collect(),
    }
}

proptest! {
    #[test]
    fn class_permutation_equivariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng);
        let c = case.conf.cols();
        let mut perm: Vec<usize> = (0..c).collect();
        for i in (1..c).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let moved = permute(&case, &perm);
        for kind in LossKind::ALL {
            let spec = LossSpec::new(kind);
            let a = compute(&spec, &LossInput::new(&case.conf, &case.labels).with_pseudo(&case.pseudo)).unwrap();
            let b = compute(&spec, &LossInput::new(&moved.conf, &moved.labels).with_pseudo(&moved.pseudo)).unwrap();
            prop_assert!((a.value - b.value).abs() <= 1e-14 * a.value.abs().max(1.0));
            for i in 0..case.conf.rows() {
                for (j, &to) in perm.iter().enumerate() {
                    prop_assert!((a.grad.get(i, j) - b.grad.get(i, to)).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn masking_ignores_frozen_confidences(seed in any::<u64>(), replacement in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_case(&mut rng);
        let mut changed = case.conf.clone();
        for (i, set) in case.pseudo.iter().enumerate() {
            for &j in set {
                changed.set(i, j, replacement);
            }
        }
        let spec = LossSpec::new(LossKind::Mask);
        prop_assert_eq!(value(&spec, &case.conf, &case), value(&spec, &changed, &case));
    }
}

#[test]
fn grammar_round_trip() {
    for text in ["an", "wan", "ls:eps=0.2", "nls", "focal:alpha=0.5,gamma=1", "em:alpha=0.2", "mask", "ps"] {
        let spec: LossSpec = text.parse().unwrap();
        let again: LossSpec = spec.to_string().parse().unwrap();
        assert_eq!(spec, again);
    }
    let em: LossSpec = "em:alpha=0.2".parse().unwrap();
    assert_eq!(em.em_alpha, 0.2);
    assert!("em:alpha=-1".parse::<LossSpec>().is_err());
    assert!("bce".parse::<LossSpec>().is_err());
}
