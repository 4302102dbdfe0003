use crate::Error;

/// ROC-AUC treating `scores_out` as positives: the fraction of (out, in)
/// pairs with the out-of-domain score higher, ties counting one half.
///
/// Computed from midranks via the Mann–Whitney statistic using exact integer
/// arithmetic on doubled ranks. The final division is arranged so that
/// `roc_auc(a, b) == 1.0 - roc_auc(b, a)` holds bit-exactly.
pub fn roc_auc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64, Error> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "roc_auc needs both score lists non-empty, got {} in-domain and {} out-of-domain",
            scores_in.len(),
            scores_out.len()
        )));
    }
    if let Some(bad) = scores_in.iter().chain(scores_out).find(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("roc_auc: score {bad} is not a number")));
    }
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, false))
        .chain(scores_out.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum over positives of doubled 1-based midranks.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let doubled_midrank = (i + 1 + j + 1) as u128;
        let positives = all[i..=j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += doubled_midrank * positives;
        i = j + 1;
    }
    let n_out = scores_out.len() as u128;
    let pairs = scores_in.len() as u128 * n_out;
    let doubled_u = doubled_rank_sum - n_out * (n_out + 1);
    Ok(auc_from_doubled_count(doubled_u, pairs))
}

/// `u2 / (2·pairs)` where `u2` counts each ordered pair twice and each tie
/// once. Values below one half are computed as `1 − complement` so the two
/// argument orders round symmetrically.
pub(crate) fn auc_from_doubled_count(u2: u128, pairs: u128) -> f64 {
    let total = 2 * pairs;
    if u2 >= pairs {
        u2 as f64 / total as f64
    } else {
        1.0 - (total - u2) as f64 / total as f64
    }
}
