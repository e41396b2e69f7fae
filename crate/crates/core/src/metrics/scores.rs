use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linear::{argmax, roc_auc, LogisticRegression, Standardizer};
use super::mi::{discretized_codes, entropy, factor_entropies, joint_entropy, mi_matrix, mutual_info};
use super::ReprDataset;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Row indices grouped by class, per factor.
fn class_index(r: &ReprDataset) -> Vec<Vec<Vec<usize>>> {
    (0..r.n_factors())
        .map(|f| {
            let mut g = vec![Vec::new(); r.cardinalities[f]];
            for (i, row) in r.factors.iter().enumerate() {
                g[row[f]].push(i);
            }
            g
        })
        .collect()
}

fn column_stats(r: &ReprDataset) -> (Vec<f64>, Vec<f64>) {
    let n = r.len() as f64;
    let d = r.dim();
    let mut mean = vec![0.0; d];
    for row in &r.codes {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for row in &r.codes {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, var)
}

/// Seeded train/test split of `0..n` with `train_frac` of rows in the first part.
pub fn split(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, 7));
    let cut = ((n as f64 * train_frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let test = idx.split_off(cut);
    (idx, test)
}

// ---- vote-based scores -----------------------------------------------------

/// Mean absolute difference of fixed-factor pairs, classified by a linear model.
/// Constant codes give the accuracy of a constant predictor.
pub fn z_diff(r: &ReprDataset, votes: usize, pairs: usize, seed: u64) -> f64 {
    let groups = class_index(r);
    let st = Standardizer::fit(&r.codes);
    let codes = st.apply_all(&r.codes);
    let mut g = rng(seed, 11);
    let n = r.n_factors();
    let mut x = Vec::with_capacity(votes);
    let mut y = Vec::with_capacity(votes);
    for _ in 0..votes {
        let k = g.random_range(0..n);
        let mut feat = vec![0.0; r.dim()];
        for _ in 0..pairs {
            let a = g.random_range(0..r.len());
            let pool = &groups[k][r.factors[a][k]];
            let b = pool[g.random_range(0..pool.len())];
            for (f, (za, zb)) in feat.iter_mut().zip(codes[a].iter().zip(&codes[b])) {
                *f += (za - zb).abs() / pairs as f64;
            }
        }
        x.push(feat);
        y.push(k);
    }
    let half = votes / 2;
    let st = Standardizer::fit(&x[..half]);
    let train = st.apply_all(&x[..half]);
    let test = st.apply_all(&x[half..]);
    LogisticRegression::fit(&train, &y[..half], n).accuracy(&test, &y[half..])
}

/// Majority-vote map from a dimension to a factor, scored on held-out votes.
fn majority_vote_accuracy(votes: &[(usize, usize)], dim: usize, n: usize) -> f64 {
    let half = votes.len() / 2;
    let mut counts = vec![vec![0usize; n]; dim];
    for &(d, k) in &votes[..half] {
        counts[d][k] += 1;
    }
    let owner: Vec<usize> = counts
        .iter()
        .map(|c| argmax(&c.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect();
    let test = &votes[half..];
    test.iter().filter(|&&(d, k)| owner[d] == k).count() as f64 / test.len() as f64
}

/// Spread below this (relative to the column mean) counts as constant.
const CONSTANT_TOL: f64 = 1e-12;

fn is_constant(spread: f64, mean: f64) -> bool {
    spread <= CONSTANT_TOL * (1.0 + mean.abs())
}

fn active_dims(mean: &[f64], var: &[f64]) -> Vec<usize> {
    (0..var.len()).filter(|&j| !is_constant(var[j].sqrt(), mean[j])).collect()
}

/// Dimension with the smallest normalised variance under a fixed factor.
/// Returns 0 when every dimension is constant.
pub fn z_min(r: &ReprDataset, votes: usize, batch: usize, seed: u64) -> f64 {
    let groups = class_index(r);
    let (mean, var) = column_stats(r);
    let active = active_dims(&mean, &var);
    if active.is_empty() {
        return 0.0;
    }
    let mut g = rng(seed, 12);
    let n = r.n_factors();
    let mut out = Vec::with_capacity(votes);
    for _ in 0..votes {
        let k = g.random_range(0..n);
        let v = r.factors[g.random_range(0..r.len())][k];
        let pool = &groups[k][v];
        let rows: Vec<usize> = (0..batch).map(|_| pool[g.random_range(0..pool.len())]).collect();
        let score = |j: usize| {
            let m = rows.iter().map(|&i| r.codes[i][j]).sum::<f64>() / batch as f64;
            rows.iter().map(|&i| (r.codes[i][j] - m).powi(2)).sum::<f64>() / batch as f64 / var[j]
        };
        let best = active
            .iter()
            .copied()
            .min_by(|&a, &b| score(a).total_cmp(&score(b)))
            .unwrap();
        out.push((best, k));
    }
    majority_vote_accuracy(&out, r.dim(), n)
}

/// Dimension whose class means (of the voted factor) spread the most.
/// Returns 0 when every dimension is constant.
pub fn z_max(r: &ReprDataset, votes: usize, batch: usize, seed: u64) -> f64 {
    let (mean, var) = column_stats(r);
    let active = active_dims(&mean, &var);
    if active.is_empty() {
        return 0.0;
    }
    let mut g = rng(seed, 13);
    let n = r.n_factors();
    let mut out = Vec::with_capacity(votes);
    for _ in 0..votes {
        let k = g.random_range(0..n);
        let rows: Vec<usize> = (0..batch).map(|_| g.random_range(0..r.len())).collect();
        let kk = r.cardinalities[k];
        let score = |j: usize| {
            let mut sum = vec![0.0; kk];
            let mut cnt = vec![0usize; kk];
            for &i in &rows {
                sum[r.factors[i][k]] += r.codes[i][j];
                cnt[r.factors[i][k]] += 1;
            }
            let means: Vec<f64> = (0..kk).filter(|&c| cnt[c] > 0).map(|c| sum[c] / cnt[c] as f64).collect();
            let mu = means.iter().sum::<f64>() / means.len() as f64;
            means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / means.len() as f64 / var[j]
        };
        let best = active
            .iter()
            .copied()
            .max_by(|&a, &b| score(a).total_cmp(&score(b)).then(b.cmp(&a)))
            .unwrap();
        out.push((best, k));
    }
    majority_vote_accuracy(&out, r.dim(), n)
}

// ---- information-based scores ----------------------------------------------

/// Per dimension `1 − Σ_{f≠best} MI² / (θ²·(N−1))`, averaged over dims with
/// `θ = max MI > 0`; 0 if no dimension carries information.
pub fn modularity(mi: &[Vec<f64>]) -> f64 {
    let scores: Vec<f64> = mi
        .iter()
        .filter_map(|row| {
            let n = row.len();
            let best = argmax(row);
            let theta = row[best];
            if theta <= 0.0 {
                return None;
            }
            if n < 2 {
                return Some(1.0);
            }
            let off: f64 = row.iter().enumerate().filter(|&(f, _)| f != best).map(|(_, m)| m * m).sum();
            Some(1.0 - off / (theta * theta * (n - 1) as f64))
        })
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Gap between the two most informative factors of each dimension, credited to
/// the best one; per factor the largest credited gap; normalised by `Σ H(f)`.
pub fn dcimig(mi: &[Vec<f64>], entropies: &[f64]) -> f64 {
    let n = entropies.len();
    let mut best_gap = vec![0.0f64; n];
    for row in mi {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let second = if n > 1 { row[order[1]] } else { 0.0 };
        let gap = row[order[0]] - second;
        best_gap[order[0]] = best_gap[order[0]].max(gap);
    }
    let h: f64 = entropies.iter().sum();
    if h <= 0.0 {
        return 0.0;
    }
    (best_gap.iter().sum::<f64>() / h).clamp(0.0, 1.0)
}

/// Per factor `(H(z*, f) − MI₁ + MI₂) / (H(f) + ln bins)` with `z*` the most
/// informative dimension; mean over factors. Lower is better.
pub fn jemmig(r: &ReprDataset, bins: usize) -> f64 {
    let codes = discretized_codes(r, bins);
    let n = r.n_factors();
    let total: f64 = (0..n)
        .map(|f| {
            let labels = r.labels(f);
            let mi: Vec<f64> = codes.iter().map(|c| mutual_info(c, &labels)).collect();
            let mut order: Vec<usize> = (0..mi.len()).collect();
            order.sort_by(|&a, &b| mi[b].total_cmp(&mi[a]).then(a.cmp(&b)));
            let second = order.get(1).map_or(0.0, |&j| mi[j]);
            let top = order[0];
            let j = joint_entropy(&codes[top], &labels) - mi[top] + second;
            (j / (entropy(&labels) + (bins as f64).ln())).clamp(0.0, 1.0)
        })
        .sum();
    total / n as f64
}

/// 99th-percentile deviation under fixed factors, relative to each dimension's
/// largest deviation; weighted by that deviation. Constant codes give 0.
pub fn irs(r: &ReprDataset) -> f64 {
    let (mean, _) = column_stats(r);
    let d = r.dim();
    let max_dev: Vec<f64> = (0..d)
        .map(|j| {
            let d = r.codes.iter().map(|row| (row[j] - mean[j]).abs()).fold(0.0, f64::max);
            if is_constant(d, mean[j]) { 0.0 } else { d }
        })
        .collect();
    let groups = class_index(r);
    let mut best = vec![f64::NEG_INFINITY; d];
    for classes in &groups {
        let present: Vec<&Vec<usize>> = classes.iter().filter(|g| !g.is_empty()).collect();
        let mut cum = vec![0.0; d];
        for rows in &present {
            for (j, c) in cum.iter_mut().enumerate() {
                let m = rows.iter().map(|&i| r.codes[i][j]).sum::<f64>() / rows.len() as f64;
                let mut dev: Vec<f64> = rows.iter().map(|&i| (r.codes[i][j] - m).abs()).collect();
                *c += percentile(&mut dev, 0.99);
            }
        }
        for j in 0..d {
            if max_dev[j] > 0.0 {
                best[j] = best[j].max(1.0 - cum[j] / present.len() as f64 / max_dev[j]);
            }
        }
    }
    let wsum: f64 = max_dev.iter().sum();
    if wsum <= 0.0 {
        return 0.0;
    }
    let s: f64 = (0..d).filter(|&j| max_dev[j] > 0.0).map(|j| best[j] * max_dev[j]).sum();
    (s / wsum).clamp(0.0, 1.0)
}

/// Linear-interpolated quantile, `q ∈ [0, 1]`.
fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

// ---- predictor-based scores ------------------------------------------------

/// Per factor, gap between the two best single-dimension predictors.
/// Each predictor is a 1-D nearest-class-mean rule fitted on the train rows;
/// its test accuracy is rescaled so that the majority-class rate maps to 0.
pub fn sap(r: &ReprDataset, train_frac: f64, seed: u64) -> f64 {
    let (train, test) = split(r.len(), train_frac, seed);
    let n = r.n_factors();
    let total: f64 = (0..n)
        .map(|f| {
            let k = r.cardinalities[f];
            let mut freq = vec![0usize; k];
            test.iter().for_each(|&i| freq[r.factors[i][f]] += 1);
            let base = *freq.iter().max().unwrap() as f64 / test.len() as f64;
            let mut scores: Vec<f64> = (0..r.dim())
                .map(|j| {
                    let mut sum = vec![0.0; k];
                    let mut cnt = vec![0usize; k];
                    for &i in &train {
                        sum[r.factors[i][f]] += r.codes[i][j];
                        cnt[r.factors[i][f]] += 1;
                    }
                    let means: Vec<Option<f64>> =
                        (0..k).map(|c| (cnt[c] > 0).then(|| sum[c] / cnt[c] as f64)).collect();
                    let hits = test
                        .iter()
                        .filter(|&&i| {
                            let v = r.codes[i][j];
                            let mut best = (f64::INFINITY, 0);
                            for (c, m) in means.iter().enumerate() {
                                if let Some(m) = m {
                                    let dist = (v - m).abs();
                                    if dist < best.0 {
                                        best = (dist, c);
                                    }
                                }
                            }
                            best.1 == r.factors[i][f]
                        })
                        .count();
                    let acc = hits as f64 / test.len() as f64;
                    if base < 1.0 {
                        ((acc - base) / (1.0 - base)).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            scores[0] - scores.get(1).copied().unwrap_or(0.0)
        })
        .sum();
    total / n as f64
}

/// Multinomial linear classifier on the full code; each class probability is
/// scored one-vs-rest by test ROC-AUC. The mean AUC is mapped to `[0, 1]` by
/// `max(0, 2·(AUC − 0.5))` and averaged over factors.
pub fn explicitness(r: &ReprDataset, train_frac: f64, seed: u64) -> f64 {
    let (train, test) = split(r.len(), train_frac, seed);
    let st = Standardizer::fit(&train.iter().map(|&i| r.codes[i].clone()).collect::<Vec<_>>());
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| st.apply(&r.codes[i])).collect();
    let xte: Vec<Vec<f64>> = test.iter().map(|&i| st.apply(&r.codes[i])).collect();
    let n = r.n_factors();
    let total: f64 = (0..n)
        .map(|f| {
            let k = r.cardinalities[f];
            let ytr: Vec<usize> = train.iter().map(|&i| r.factors[i][f]).collect();
            let model = LogisticRegression::fit(&xtr, &ytr, k);
            let probs: Vec<Vec<f64>> = xte.iter().map(|x| model.probabilities(x)).collect();
            let aucs: Vec<f64> = (0..k)
                .map(|c| {
                    let pos: Vec<bool> = test.iter().map(|&i| r.factors[i][f] == c).collect();
                    let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                    roc_auc(&s, &pos)
                })
                .collect();
            let auc = aucs.iter().sum::<f64>() / k as f64;
            (2.0 * (auc - 0.5)).max(0.0)
        })
        .sum();
    total / n as f64
}

/// Test accuracy of a multinomial linear classifier per factor.
pub fn apa(r: &ReprDataset, train_frac: f64, seed: u64) -> Vec<f64> {
    let (train, test) = split(r.len(), train_frac, seed);
    let st = Standardizer::fit(&train.iter().map(|&i| r.codes[i].clone()).collect::<Vec<_>>());
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| st.apply(&r.codes[i])).collect();
    let xte: Vec<Vec<f64>> = test.iter().map(|&i| st.apply(&r.codes[i])).collect();
    (0..r.n_factors())
        .map(|f| {
            let ytr: Vec<usize> = train.iter().map(|&i| r.factors[i][f]).collect();
            let yte: Vec<usize> = test.iter().map(|&i| r.factors[i][f]).collect();
            LogisticRegression::fit(&xtr, &ytr, r.cardinalities[f]).accuracy(&xte, &yte)
        })
        .collect()
}

/// Convenience wrapper pairing [`mi_matrix`] with [`dcimig`].
pub fn dcimig_of(r: &ReprDataset, bins: usize) -> f64 {
    dcimig(&mi_matrix(r, bins), &factor_entropies(r))
}
