//! The separability baseline: plain logistic regression on flattened
//! per-flow FSU summaries, trained by full-batch gradient descent. Entirely
//! independent of the transformer path it benchmarks.

use flowsem::analysis::flow_summaries;
use flowsem::dataset::DatasetFile;

/// Trains on `train` summaries and returns accuracy on `test`.
pub fn logistic_oracle_accuracy(train: &DatasetFile, test: &DatasetFile) -> f64 {
    let (x_train, y_train) = flow_summaries(train).expect("labeled train");
    let (x_test, y_test) = flow_summaries(test).expect("labeled test");
    let f = train.n;

    // Standardize with train statistics.
    let n = y_train.len();
    let mut mean = vec![0.0f64; f];
    let mut std = vec![0.0f64; f];
    for row in x_train.chunks(f) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x_train.chunks(f) {
        for ((s, &v), &m) in std.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(1e-9));
    let normalize = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&mean)
            .zip(&std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    };

    // Binary logistic regression, full-batch gradient descent.
    assert!(
        y_train.iter().all(|&y| y < 2),
        "oracle handles two classes"
    );
    let mut w = vec![0.0f64; f];
    let mut b = 0.0f64;
    let lr = 0.5;
    for _ in 0..400 {
        let mut gw = vec![0.0f64; f];
        let mut gb = 0.0f64;
        for (row, &y) in x_train.chunks(f).zip(&y_train) {
            let xr = normalize(row);
            let logit: f64 = xr.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-logit).exp());
            let err = p - y as f64;
            for (g, x) in gw.iter_mut().zip(&xr) {
                *g += err * x;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n as f64;
        }
        b -= lr * gb / n as f64;
    }

    let mut correct = 0usize;
    for (row, &y) in x_test.chunks(f).zip(&y_test) {
        let xr = normalize(row);
        let logit: f64 = xr.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
        let pred = (logit > 0.0) as usize;
        if pred == y {
            correct += 1;
        }
    }
    correct as f64 / y_test.len() as f64
}
