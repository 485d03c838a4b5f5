use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spml_core::math::DenseMatrix;
use spml_core::metrics::{self, EvalSet, MetricsReport, PredictionMatrix};

fn random_problem(rng: &mut ChaCha8Rng, singletons: bool) -> (Vec<Vec<f64>>, EvalSet) {
    let n = rng.random_range(1..=20);
    let c = rng.random_range(2..=10);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..c).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let sets = (0..n)
        .map(|_| {
            if singletons {
                return vec![rng.random_range(0..c)];
            }
            let mut s: Vec<usize> = (0..c).filter(|_| rng.random_bool(0.3)).collect();
            if s.is_empty() {
                s.push(rng.random_range(0..c));
            }
            s
        })
        .collect();
    (rows, EvalSet::new(c, sets).unwrap())
}

fn preds(rows: &[Vec<f64>]) -> PredictionMatrix {
    PredictionMatrix::new(DenseMatrix::from_rows(rows).unwrap()).unwrap()
}

#[test]
fn top1_equals_top_set_for_singletons() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let (rows, gt) = random_problem(&mut rng, true);
        let p = preds(&rows);
        assert_eq!(metrics::top1_ml(&p, &gt).unwrap(), metrics::top_set_ml(&p, &gt).unwrap());
    }
}

#[test]
fn rank_metrics_survive_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let (rows, gt) = random_problem(&mut rng, false);
        let squashed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v * v * v).collect())
            .collect();
        let (a, b) = (preds(&rows), preds(&squashed));
        assert_eq!(metrics::top_set_ml(&a, &gt).unwrap(), metrics::top_set_ml(&b, &gt).unwrap());
        assert_eq!(metrics::top1_ml(&a, &gt).unwrap(), metrics::top1_ml(&b, &gt).unwrap());
        assert_eq!(metrics::mean_ap(&a, &gt).unwrap(), metrics::mean_ap(&b, &gt).unwrap());
        // threshold-preserving transform around 0.5
        let stretched: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| if v > 0.5 { 0.5 + (v - 0.5) / 2.0 } else { v / 2.0 }).collect())
            .collect();
        let s = preds(&stretched);
        assert_eq!(metrics::iou_acc(&a, &gt, 0.5).unwrap(), metrics::iou_acc(&s, &gt, 0.5).unwrap());
        assert_eq!(metrics::f1(&a, &gt, 0.5).unwrap(), metrics::f1(&s, &gt, 0.5).unwrap());
    }
}

#[test]
fn perfect_predictions_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (rows, gt) = random_problem(&mut rng, false);
        let oracle: Vec<Vec<f64>> = gt
            .label_sets()
            .iter()
            .map(|s| (0..rows[0].len()).map(|j| if s.contains(&j) { 1.0 } else { 0.0 }).collect())
            .collect();
        let report = MetricsReport::compute(&preds(&oracle), &gt).unwrap();
        assert_eq!(report.values(), [1.0; 5]);
    }
}

#[test]
fn all_metrics_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let (rows, gt) = random_problem(&mut rng, false);
        let report = MetricsReport::compute(&preds(&rows), &gt).unwrap();
        assert!(report.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn half_confidence_model() {
    let gt = EvalSet::new(4, vec![vec![0], vec![1, 2], vec![3]]).unwrap();
    let p = preds(&vec![vec![0.5; 4]; 3]);
    assert_eq!(metrics::iou_acc(&p, &gt, 0.5).unwrap(), 0.0);
    assert_eq!(metrics::f1(&p, &gt, 0.5).unwrap(), 0.0);
    // ties resolve to class 0
    assert_eq!(metrics::top1_ml(&p, &gt).unwrap(), 1.0 / 3.0);
    assert_eq!(metrics::avg_predicted_positives(&p, 0.5), 0.0);
}

#[test]
fn report_json_and_table() {
    let gt = EvalSet::new(2, vec![vec![0], vec![0, 1]]).unwrap();
    let report = MetricsReport::compute(&preds(&[vec![0.9, 0.2], vec![0.8, 0.7]]), &gt).unwrap();
    let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    let table = report.to_table("Mask");
    assert!(table.lines().next().unwrap().contains("IOU Acc."));
    assert!(table.contains("100.0"));
}
