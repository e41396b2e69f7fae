use super::ReprDataset;

/// Equal-population discretisation: thresholds at the `k/bins` quantiles, so
/// tied values always share a bin and a column with `K < bins` distinct values
/// keeps exactly `K` bins.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    assert!(bins >= 1, "need at least one bin");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|k| sorted[(k * m / bins).min(m - 1)]).collect();
    cuts.dedup();
    // the smallest value can never open a new bin
    cuts.retain(|&c| c > sorted[0]);
    values.iter().map(|v| cuts.partition_point(|&c| c <= *v)).collect()
}

fn counts(labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut c = vec![0; k];
    labels.iter().for_each(|&l| c[l] += 1);
    c
}

/// Plug-in Shannon entropy in nats.
pub fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    counts(labels)
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in joint entropy of two label sequences.
pub fn joint_entropy(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let joint: Vec<usize> = a.iter().zip(b).map(|(&x, &y)| x * kb + y).collect();
    entropy(&joint)
}

/// Plug-in mutual information in nats, clamped at 0 against rounding.
pub fn mutual_info(a: &[usize], b: &[usize]) -> f64 {
    (entropy(a) + entropy(b) - joint_entropy(a, b)).max(0.0)
}

/// Discretised code columns, one vector per dimension.
pub fn discretized_codes(r: &ReprDataset, bins: usize) -> Vec<Vec<usize>> {
    (0..r.dim()).map(|j| discretize(&r.column(j), bins)).collect()
}

/// `D × N` mutual information between each code dimension and each factor.
pub fn mi_matrix(r: &ReprDataset, bins: usize) -> Vec<Vec<f64>> {
    let codes = discretized_codes(r, bins);
    let factors: Vec<Vec<usize>> = (0..r.n_factors()).map(|f| r.labels(f)).collect();
    codes
        .iter()
        .map(|c| factors.iter().map(|f| mutual_info(c, f)).collect())
        .collect()
}

pub fn factor_entropies(r: &ReprDataset) -> Vec<f64> {
    (0..r.n_factors()).map(|f| entropy(&r.labels(f))).collect()
}
