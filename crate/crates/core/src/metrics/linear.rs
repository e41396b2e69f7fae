//! Multinomial logistic regression trained by full-batch Adam.

/// Column standardisation fitted on a training set; constant columns map to 0.
#[derive(Clone, Debug)]
pub struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let inv_std = var
            .iter()
            .map(|&v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        Standardizer { mean, inv_std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LogisticRegression {
    classes: usize,
    dim: usize,
    /// `classes × (dim + 1)`, bias last.
    w: Vec<f64>,
}

const ITERS: usize = 300;
const LR: f64 = 0.05;
const L2: f64 = 1e-4;

impl LogisticRegression {
    /// Fits on already-standardised rows. Deterministic: starts from zero weights.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let dim = x[0].len();
        let width = dim + 1;
        let mut w = vec![0.0; classes * width];
        let (mut m, mut v) = (vec![0.0; w.len()], vec![0.0; w.len()]);
        let n = x.len() as f64;
        let mut grad = vec![0.0; w.len()];
        let mut p = vec![0.0; classes];
        for step in 1..=ITERS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (row, &label) in x.iter().zip(y) {
                logits(&w, row, classes, &mut p);
                softmax_in_place(&mut p);
                for c in 0..classes {
                    let e = (p[c] - if c == label { 1.0 } else { 0.0 }) / n;
                    let g = &mut grad[c * width..(c + 1) * width];
                    for (gi, xi) in g.iter_mut().zip(row) {
                        *gi += e * xi;
                    }
                    g[dim] += e;
                }
            }
            let (c1, c2) = (1.0 - 0.9f64.powi(step as i32), 1.0 - 0.999f64.powi(step as i32));
            for i in 0..w.len() {
                let g = grad[i] + if i % width == dim { 0.0 } else { L2 * w[i] };
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.999 * v[i] + 0.001 * g * g;
                w[i] -= LR * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
            }
        }
        LogisticRegression { classes, dim, w }
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.dim);
        let mut p = vec![0.0; self.classes];
        logits(&self.w, row, self.classes, &mut p);
        p
    }

    pub fn probabilities(&self, row: &[f64]) -> Vec<f64> {
        let mut p = self.scores(row);
        softmax_in_place(&mut p);
        p
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.scores(row))
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len() as f64
    }
}

fn logits(w: &[f64], row: &[f64], classes: usize, out: &mut [f64]) {
    let width = row.len() + 1;
    for (c, o) in out.iter_mut().enumerate().take(classes) {
        let wc = &w[c * width..(c + 1) * width];
        *o = wc[..row.len()].iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + wc[row.len()];
    }
}

fn softmax_in_place(p: &mut [f64]) {
    let mx = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in p.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    p.iter_mut().for_each(|v| *v /= s);
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve of `scores` for the positive set, ties counted half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.5;
    }
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}
