//! Numerical forms of the two heterogeneity-reduction results.

use fedgpl::encoder::{ParamLayout, ParamVector};
use fedgpl::hidta::{aggregate, transferability, TransferMatrix};
use fedgpl::metrics::{data_heterogeneity, task_heterogeneity};
use fedgpl::tasks::TaskLevel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DIM: usize = 800;

pub fn pv(values: Vec<f64>) -> ParamVector {
    ParamVector {
        layout: ParamLayout {
            prompt_len: values.len(),
            head_rows: 0,
            head_cols: 0,
        },
        values,
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn delta_t(a: &[f64], b: &[f64]) -> f64 {
    task_heterogeneity(a, b, TaskLevel::Node, TaskLevel::Node).unwrap()
}

/// Returns `(before, after)` or `None` when a directed transferability is not positive.
pub fn two_client_step(ta: &[f64], tb: &[f64], ua: &[f64], ub: &[f64]) -> Option<(f64, f64)> {
    let (pa, pb) = (add(ta, ua), add(tb, ub));
    let t = [
        [
            transferability(ta, &pa, &pa).unwrap(),
            transferability(ta, &pa, &pb).unwrap(),
        ],
        [
            transferability(tb, &pb, &pa).unwrap(),
            transferability(tb, &pb, &pb).unwrap(),
        ],
    ];
    if t[0][1] <= 0.0 || t[1][0] <= 0.0 {
        return None;
    }
    let m = TransferMatrix::from_fn(2, |i, j| t[i][j]);
    let next = aggregate(&[pv(ta.to_vec()), pv(tb.to_vec())], &m).unwrap();
    let (na, nb) = (add(&next[0].values, ua), add(&next[1].values, ub));
    Some((delta_t(&pa, &pb), delta_t(&na, &nb)))
}

/// Mean prompted-minus-plain `Δ_D` over paired scalar draws, with its standard error.
pub fn prompting_gap(eta_a: f64, eta_b: f64, alpha: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = super::rng(seed);
    let diffs: Vec<f64> = (0..draws)
        .map(|_| {
            let (ua, ub): (f64, f64) = (rng.random(), rng.random());
            let plain = data_heterogeneity(&[eta_a * ua], &[eta_b * ub]).unwrap();
            let prompted = data_heterogeneity(
                &[eta_a * (alpha + (1.0 - alpha) * ua)],
                &[eta_b * (alpha + (1.0 - alpha) * ub)],
            )
            .unwrap();
            prompted - plain
        })
        .collect();
    let n = draws as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn normal_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..DIM)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Runs instances until `count` have both transferabilities positive;
/// returns the number of violations and the worst excess.
pub fn aggregation_violations(count: usize, seed: u64) -> (usize, f64) {
    let mut rng = super::rng(seed);
    let (mut instances, mut violations, mut worst) = (0, 0, 0.0f64);
    while instances < count {
        let ta = normal_vec(&mut rng, 1.0);
        let tb = normal_vec(&mut rng, 1.0);
        // update scale log-uniform in [0.01, 1] times the parameter spread
        let s = rng.random_range(0.01f64.ln()..=0.0).exp();
        let ua = normal_vec(&mut rng, s);
        let ub = normal_vec(&mut rng, s);
        let Some((before, after)) = two_client_step(&ta, &tb, &ua, &ub) else {
            continue;
        };
        instances += 1;
        if after > before + 1e-9 {
            violations += 1;
            worst = worst.max(after - before);
        }
    }
    (violations, worst)
}
