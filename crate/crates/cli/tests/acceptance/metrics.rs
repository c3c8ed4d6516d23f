//! Classification metrics against a brute-force confusion matrix.
#![allow(clippy::needless_range_loop)]

use flowgnn::eval::compute_metrics;
use flowgnn::seed;
use rand::Rng;

use crate::tol::METRIC_CASES;
use crate::Outcome;

/// (accuracy, weighted F1, macro F1 over present classes, per-class F1)
fn brute_force(t: &[usize], p: &[usize], k: usize) -> (f64, f64, f64, Vec<f64>) {
    let mut cm = vec![vec![0u64; k]; k];
    for i in 0..t.len() {
        cm[t[i]][p[i]] += 1;
    }
    let mut f1 = Vec::with_capacity(k);
    let mut support = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let predicted: u64 = (0..k).map(|r| cm[r][c]).sum();
        let actual: u64 = cm[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        f1.push(if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        });
        support.push(actual);
    }
    let n = t.len() as f64;
    let correct: u64 = (0..k).map(|c| cm[c][c]).sum();
    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    let macro_f1 = present.iter().map(|&c| f1[c]).sum::<f64>() / present.len() as f64;
    let weighted = (0..k).map(|c| f1[c] * support[c] as f64).sum::<f64>() / n;
    (correct as f64 / n, weighted, macro_f1, f1)
}

pub fn check() -> Outcome {
    let mut rng = seed::rng(seed::derive(0, "acceptance.metrics"));
    let mut mismatches = 0;
    for _ in 0..METRIC_CASES {
        let k = rng.random_range(1..=10);
        let n = rng.random_range(1..=300);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let hit: f64 = rng.random();
        let p: Vec<usize> = t
            .iter()
            .map(|&c| {
                if rng.random::<f64>() < hit {
                    c
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect();
        let r = compute_metrics(&t, &p, k).unwrap();
        let (accuracy, weighted, macro_f1, f1) = brute_force(&t, &p, k);
        let same = r.accuracy == accuracy
            && r.weighted_f1 == weighted
            && r.macro_f1 == macro_f1
            && r.per_class.iter().map(|c| c.f1).eq(f1.iter().copied());
        mismatches += usize::from(!same);
    }
    Outcome::new(
        mismatches == 0,
        format!("{METRIC_CASES} random cases, {mismatches} not bit-identical to the brute-force oracle"),
    )
}
