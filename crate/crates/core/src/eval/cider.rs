//! CIDEr-D (and plain CIDEr) over tf-idf n-gram vectors, n = 1..4.

use std::collections::{BTreeMap, BTreeSet};

use super::ngram_counts;

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CiderVariant {
    /// Clipped numerator and Gaussian length penalty.
    #[default]
    D,
    Plain,
}

/// Document frequencies over a collection of reference sets.
pub struct IdfTable<'a> {
    df: BTreeMap<&'a [String], f64>,
    log_n: f64,
}

impl<'a> IdfTable<'a> {
    /// Each element of `documents` is the reference set of one document.
    pub fn new(documents: &'a [Vec<Vec<String>>]) -> Self {
        let mut df: BTreeMap<&[String], f64> = BTreeMap::new();
        for refs in documents {
            let mut seen: BTreeSet<&[String]> = BTreeSet::new();
            for r in refs {
                for n in 1..=4 {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        let log_n = (documents.len().max(1) as f64).ln();
        Self { df, log_n }
    }

    fn idf(&self, g: &[String]) -> f64 {
        self.log_n - self.df.get(g).copied().unwrap_or(0.0).max(1.0).ln()
    }

    /// True when the collection is too small for any n-gram to carry weight.
    pub fn is_degenerate(&self) -> bool {
        self.log_n == 0.0
    }

    fn vectorize(&self, tokens: &[String]) -> TfIdf {
        let mut vecs = Vec::with_capacity(4);
        let mut norms = [0.0; 4];
        for n in 1..=4 {
            let mut v: BTreeMap<Vec<String>, f64> = BTreeMap::new();
            for (g, tf) in ngram_counts(tokens, n) {
                let w = tf as f64 * self.idf(g);
                norms[n - 1] += w * w;
                v.insert(g.to_vec(), w);
            }
            vecs.push(v);
        }
        TfIdf { vecs, norms: norms.map(f64::sqrt), len: tokens.len() as f64 }
    }

    /// Score of one candidate against its references (0..10).
    pub fn score(&self, candidate: &[String], references: &[Vec<String>], variant: CiderVariant) -> f64 {
        if references.is_empty() {
            return 0.0;
        }
        let hyp = self.vectorize(candidate);
        let mut total = 0.0;
        for r in references {
            let rv = self.vectorize(r);
            let delta = hyp.len - rv.len;
            let mut acc = 0.0;
            for n in 0..4 {
                let mut val = 0.0;
                for (g, &wh) in &hyp.vecs[n] {
                    if let Some(&wr) = rv.vecs[n].get(g) {
                        val += match variant {
                            CiderVariant::D => wh.min(wr) * wr,
                            CiderVariant::Plain => wh * wr,
                        };
                    }
                }
                if hyp.norms[n] != 0.0 && rv.norms[n] != 0.0 {
                    val /= hyp.norms[n] * rv.norms[n];
                } else {
                    val = 0.0;
                }
                if variant == CiderVariant::D {
                    val *= (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
                }
                acc += val;
            }
            total += acc / 4.0;
        }
        CIDER_SCALE * total / references.len() as f64
    }
}

pub struct IdfTableOwned {
    documents: Vec<Vec<Vec<String>>>,
}

impl IdfTableOwned {
    /// One single-sentence document per sentence.
    pub fn from_sentences(sentences: &[Vec<String>]) -> Self {
        Self { documents: sentences.iter().map(|s| vec![s.clone()]).collect() }
    }

    pub fn table(&self) -> IdfTable<'_> {
        IdfTable::new(&self.documents)
    }
}

struct TfIdf {
    vecs: Vec<BTreeMap<Vec<String>, f64>>,
    norms: [f64; 4],
    len: f64,
}

/// Per-candidate CIDEr with document frequencies taken from `references`
/// (one reference set per candidate). A corpus of fewer than two documents
/// has no usable idf and every score is 0.
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], variant: CiderVariant) -> Vec<f64> {
    assert_eq!(candidates.len(), references.len(), "one reference set per candidate");
    let table = IdfTable::new(references);
    candidates.iter().zip(references).map(|(c, r)| table.score(c, r, variant)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tokenize;
    use std::collections::HashMap;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn identity_and_disjoint() {
        let refs = vec![vec![toks("a man runs fast")], vec![toks("the dog sleeps now")]];
        let cands = vec![toks("a man runs fast"), toks("the dog sleeps now")];
        for s in cider(&cands, &refs, CiderVariant::D) {
            assert!((s - 10.0).abs() < 1e-12);
        }
        let s = cider(&[toks("zebra"), toks("the dog sleeps now")], &refs, CiderVariant::D);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn short_sentences_lack_high_orders() {
        let refs = vec![vec![toks("x y z")], vec![toks("p q r")]];
        let s = cider(&[toks("x y z")], &refs[..1], CiderVariant::D);
        assert_eq!(s, vec![0.0]);
        let s = cider(&[toks("x y z"), toks("p q r")], &refs, CiderVariant::D);
        assert!((s[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_corpus_scores_zero() {
        let s = cider(&[toks("a b")], &[vec![toks("a b")]], CiderVariant::D);
        assert_eq!(s, vec![0.0]);
    }

    /// Direct transcription of the formula with string-keyed hash maps.
    fn oracle(cands: &[&str], refs: &[Vec<&str>]) -> Vec<f64> {
        let split = |s: &str| -> Vec<String> { s.split(' ').map(str::to_string).collect() };
        let grams = |w: &[String], n: usize| -> HashMap<String, f64> {
            let mut m = HashMap::new();
            if w.len() >= n {
                for i in 0..=w.len() - n {
                    *m.entry(w[i..i + n].join("|")).or_insert(0.0) += 1.0;
                }
            }
            m
        };
        let n_docs = refs.len() as f64;
        let mut df: HashMap<String, f64> = HashMap::new();
        for doc in refs {
            let mut seen = std::collections::HashSet::new();
            for r in doc {
                for n in 1..=4 {
                    for g in grams(&split(r), n).into_keys() {
                        seen.insert(g);
                    }
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        let weight = |g: &str, tf: f64| tf * (n_docs.ln() - df.get(g).copied().unwrap_or(0.0).max(1.0).ln());
        let mut out = Vec::new();
        for (c, doc) in cands.iter().zip(refs) {
            let cw = split(c);
            let mut per_ref = Vec::new();
            for r in doc {
                let rw = split(r);
                let mut sum_n = 0.0;
                for n in 1..=4 {
                    let hc = grams(&cw, n);
                    let hr = grams(&rw, n);
                    let vc: HashMap<&String, f64> = hc.iter().map(|(g, &t)| (g, weight(g, t))).collect();
                    let vr: HashMap<&String, f64> = hr.iter().map(|(g, &t)| (g, weight(g, t))).collect();
                    let nc = vc.values().map(|x| x * x).sum::<f64>().sqrt();
                    let nr = vr.values().map(|x| x * x).sum::<f64>().sqrt();
                    let num: f64 = vc.iter().filter_map(|(g, a)| vr.get(g).map(|b| a.min(*b) * b)).sum();
                    let cos = if nc > 0.0 && nr > 0.0 { num / (nc * nr) } else { 0.0 };
                    let d = cw.len() as f64 - rw.len() as f64;
                    sum_n += cos * (-d * d / 72.0).exp();
                }
                per_ref.push(sum_n / 4.0);
            }
            out.push(10.0 * per_ref.iter().sum::<f64>() / per_ref.len() as f64);
        }
        out
    }

    #[test]
    fn matches_direct_formula() {
        let cands = ["a man is playing a guitar", "the woman cuts an onion slowly", "dogs run on the beach"];
        let refs = vec![
            vec!["a man plays the guitar", "someone is playing a guitar on stage"],
            vec!["a woman is cutting an onion", "the woman slices onion"],
            vec!["two dogs run on a sandy beach", "dogs are running along the beach"],
        ];
        let expected = oracle(&cands, &refs);
        let c: Vec<Vec<String>> = cands.iter().map(|s| toks(s)).collect();
        let r: Vec<Vec<Vec<String>>> = refs.iter().map(|d| d.iter().map(|s| toks(s)).collect()).collect();
        let got = cider(&c, &r, CiderVariant::D);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-6, "{g} vs {e}");
        }
        assert!(expected.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn self_reference_is_ten() {
        let sents = ["one two three four", "four five six seven", "six seven eight nine", "two four two four"];
        let c: Vec<Vec<String>> = sents.iter().map(|s| toks(s)).collect();
        let r: Vec<Vec<Vec<String>>> = c.iter().map(|s| vec![s.clone()]).collect();
        for s in cider(&c, &r, CiderVariant::D) {
            assert!((s - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn plain_variant_ignores_length() {
        let r = vec![vec![toks("a b c")], vec![toks("x y")]];
        let c = vec![toks("a b c a b c"), toks("x y")];
        let d = cider(&c, &r, CiderVariant::D);
        let p = cider(&c, &r, CiderVariant::Plain);
        assert!(p[0] > d[0]);
    }
}
