//! Sentence-level BLEU-4.

use super::ngram_counts;

/// BLEU-4 of `candidate` against one reference: geometric mean of clipped
/// n-gram precisions (n = 1..4) times the brevity penalty. An order with no
/// clipped match uses the floor `1 / (2·len)` where `len` is the candidate
/// length.
pub fn bleu4(candidate: &[String], reference: &[String]) -> f64 {
    let c = candidate.len();
    if c == 0 {
        return 0.0;
    }
    let floor = 1.0 / (2.0 * c as f64);
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand.iter().map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0))).sum();
        let p = if matched == 0 || total == 0 { floor } else { matched as f64 / total as f64 };
        log_sum += p.ln();
    }
    let r = reference.len() as f64;
    let bp = if (c as f64) < r { (1.0 - r / c as f64).exp() } else { 1.0 };
    bp * (log_sum / 4.0).exp()
}
