//! Facet statistics: sampling histograms, the naive `2^m` bound, and the
//! CSV report bundle. Counting sample hits per activation pattern is a
//! cheap proxy for facet volume; the interesting phenomenon is how heavily
//! the mass concentrates on a handful of facets.

use std::collections::HashMap;
use std::path::Path;

use num_bigint::BigInt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::facet::FacetSet;
use crate::fixtures::sample_in_box;
use crate::network::{ActivationPattern, Network};
use crate::rat::Rat;
use crate::train::{metrics_to_csv, EpochMetrics};
use crate::{Error, Result};

/// Per-pattern hit counts, sorted by count descending (pattern ascending
/// on ties, for determinism).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub rows: Vec<(ActivationPattern, u64)>,
    pub total: u64,
}

/// Draws `n_samples` uniform points from the box and counts forward-pass
/// activation patterns. Samples are generated in seed-derived chunks, so
/// the result does not depend on how the chunks are scheduled.
pub fn sample_histogram(
    net: &Network,
    domain: &[(Rat, Rat)],
    n_samples: u64,
    seed: u64,
) -> Result<Histogram> {
    if n_samples == 0 {
        return Err(Error::Schema("need at least one sample".into()));
    }
    const CHUNK: u64 = 1024;
    let mut counts: HashMap<ActivationPattern, u64> = HashMap::new();
    let chunks = n_samples.div_ceil(CHUNK);
    for c in 0..chunks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c));
        let in_chunk = CHUNK.min(n_samples - c * CHUNK);
        for _ in 0..in_chunk {
            let x = sample_in_box(&mut rng, domain);
            let (_, pattern) = net.forward(&x)?;
            *counts.entry(pattern).or_insert(0) += 1;
        }
    }
    let mut rows: Vec<(ActivationPattern, u64)> = counts.into_iter().collect();
    rows.sort_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then(pa.cmp(pb)));
    Ok(Histogram {
        rows,
        total: n_samples,
    })
}

/// Smallest `k` such that the top-`k` facets cover at least `share` of the
/// samples. `concentration(h, 1.0)` is the number of nonempty rows.
pub fn concentration(histogram: &Histogram, share: f64) -> Result<usize> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(Error::Schema(format!("share {share} outside (0, 1]")));
    }
    let need = share * histogram.total as f64;
    let mut acc = 0u64;
    for (k, (_, c)) in histogram.rows.iter().enumerate() {
        acc += c;
        if acc as f64 >= need {
            return Ok(k + 1);
        }
    }
    Ok(histogram.rows.len())
}

/// The trivial `2^m` pattern-count bound, `m` the number of ReLUs.
pub fn naive_bound(net: &Network) -> BigInt {
    BigInt::from(1) << net.relu_count()
}

/// Run-level metadata carried into `facets.csv`.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub architecture: String,
    pub mmr: bool,
    pub accuracy: f64,
}

/// Writes `facets.csv`, `histogram.csv`, and `training.csv` into
/// `out_dir`. Deterministic: identical inputs give byte-identical files.
/// The `external_bound` column is reserved for a bound computed outside
/// this crate and is left empty.
pub fn report(
    net: &Network,
    facets: &FacetSet,
    histogram: &Histogram,
    training: &[EpochMetrics],
    meta: &ReportMeta,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut facets_csv = String::from(
        "input_dim,architecture,mmr,facet_count,naive_bound,external_bound,accuracy\n",
    );
    facets_csv.push_str(&format!(
        "{},{},{},{},{},,{}\n",
        net.input_dim(),
        meta.architecture,
        meta.mmr,
        facets.facets.len(),
        naive_bound(net),
        meta.accuracy
    ));
    std::fs::write(out_dir.join("facets.csv"), facets_csv)?;

    let mut hist_csv = String::from("rank,pattern,count\n");
    for (rank, (pattern, count)) in histogram.rows.iter().enumerate() {
        hist_csv.push_str(&format!("{},{},{}\n", rank + 1, pattern.to_bit_string(), count));
    }
    std::fs::write(out_dir.join("histogram.csv"), hist_csv)?;
    std::fs::write(out_dir.join("training.csv"), metrics_to_csv(training))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facet::{enumerate_facets, EnumConfig};
    use crate::fixtures::{identity_network, random_network};
    use crate::lp::ConstraintSystem;
    use crate::rat::{frac, int};

    #[test]
    fn identity_histogram_is_binomial() {
        let net = identity_network();
        let bx = vec![(int(-1), int(1))];
        let h = sample_histogram(&net, &bx, 10_000, 3).unwrap();
        assert_eq!(h.rows.len(), 2);
        assert_eq!(h.rows.iter().map(|(_, c)| c).sum::<u64>(), 10_000);
        // 4 sigma around n/2 with sigma = sqrt(n)/2 = 50
        for (_, c) in &h.rows {
            assert!((4800..=5200).contains(c), "count {c}");
        }
    }

    #[test]
    fn positive_box_hits_one_pattern() {
        let net = identity_network();
        let bx = vec![(frac(1, 2), int(2))];
        let h = sample_histogram(&net, &bx, 10_000, 1).unwrap();
        assert_eq!(h.rows.len(), 1);
        assert_eq!(h.rows[0].1, 10_000);
    }

    #[test]
    fn histogram_patterns_are_enumerated() {
        let net = random_network(31, 2, &[3, 2]);
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        let domain = ConstraintSystem::from_box(&bx).unwrap();
        let facets = enumerate_facets(&net, &domain, &EnumConfig::default()).unwrap();
        let patterns = facets.patterns();
        let h = sample_histogram(&net, &bx, 2_000, 5).unwrap();
        for (p, _) in &h.rows {
            assert!(patterns.contains(p));
        }
    }

    #[test]
    fn concentration_prefix_sums() {
        let mk = |counts: &[u64]| Histogram {
            rows: counts
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    (
                        ActivationPattern::from_bit_string(&format!("{i:03b}")).unwrap(),
                        c,
                    )
                })
                .collect(),
            total: counts.iter().sum(),
        };
        let h = mk(&[50, 50]);
        assert_eq!(concentration(&h, 0.7).unwrap(), 2);
        let h = mk(&[70, 20, 10]);
        assert_eq!(concentration(&h, 0.7).unwrap(), 1);
        assert_eq!(concentration(&h, 1.0).unwrap(), 3);
        let mut prev = 0;
        for share in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let k = concentration(&h, share).unwrap();
            assert!(k >= prev);
            prev = k;
        }
        assert!(concentration(&h, 0.0).is_err());
    }

    #[test]
    fn naive_bound_counts_relus() {
        assert_eq!(naive_bound(&identity_network()), BigInt::from(2));
        let net = random_network(1, 2, &[3, 2]);
        assert_eq!(naive_bound(&net), BigInt::from(32));
        let bx = vec![(int(-2), int(2)), (int(-2), int(2))];
        let domain = ConstraintSystem::from_box(&bx).unwrap();
        let facets = enumerate_facets(&net, &domain, &EnumConfig::default()).unwrap();
        assert!(BigInt::from(facets.facets.len()) <= naive_bound(&net));
    }

    #[test]
    fn report_is_deterministic() {
        let net = identity_network();
        let bx = vec![(int(-1), int(1))];
        let domain = ConstraintSystem::from_box(&bx).unwrap();
        let facets = enumerate_facets(&net, &domain, &EnumConfig::default()).unwrap();
        let h = sample_histogram(&net, &bx, 100, 2).unwrap();
        let meta = ReportMeta {
            architecture: "identity".into(),
            mmr: false,
            accuracy: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        report(&net, &facets, &h, &[], &meta, &a_dir).unwrap();
        report(&net, &facets, &h, &[], &meta, &b_dir).unwrap();
        for f in ["facets.csv", "histogram.csv", "training.csv"] {
            assert_eq!(
                std::fs::read(a_dir.join(f)).unwrap(),
                std::fs::read(b_dir.join(f)).unwrap(),
                "{f}"
            );
        }
        let text = std::fs::read_to_string(a_dir.join("facets.csv")).unwrap();
        assert!(text.contains(",2,2,,1"));
        let empty = Histogram {
            rows: vec![],
            total: 0,
        };
        report(&net, &facets, &empty, &[], &meta, &a_dir).unwrap();
        assert_eq!(
            std::fs::read_to_string(a_dir.join("histogram.csv")).unwrap(),
            "rank,pattern,count\n"
        );
    }
}
