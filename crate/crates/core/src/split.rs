//! Slide-level train/validation/test partitioning.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ScannerId;
use crate::error::{Error, Result};
use crate::geometry::round_half_up;
use crate::rng;

pub const MIN_SLIDES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of all slides held out for testing.
    pub test_fraction: f64,
    /// Share of the remaining slides held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.3,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn partition_of(&self, id: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|x| x == id);
        if has(&self.train_ids) {
            Some("train")
        } else if has(&self.val_ids) {
            Some("val")
        } else if has(&self.test_ids) {
            Some("test")
        } else {
            None
        }
    }
}

/// Splits `total` across groups proportionally to `sizes`, floors first and
/// the rest by largest remainder (earlier group wins ties).
fn apportion(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - quota[b] as f64).total_cmp(&(exact[a] - quota[a] as f64)).then(a.cmp(&b)));
    let mut left = total.saturating_sub(quota.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if quota[g] < sizes[g] {
            quota[g] += 1;
            left -= 1;
        }
    }
    quota
}

/// Two-stage split: test first (`test_fraction` of all slides), then
/// validation (`val_fraction` of the rest); counts round half up, and are
/// distributed across scanners by largest remainder when scanners are known.
pub fn make_split(slides: &[(String, Option<ScannerId>)], cfg: &SplitConfig) -> Result<SplitSpec> {
    if !(0.0..1.0).contains(&cfg.test_fraction) || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::config("split fractions must lie in [0, 1)"));
    }
    if slides.len() < MIN_SLIDES {
        return Err(Error::TooFewSlides {
            needed: MIN_SLIDES,
            got: slides.len(),
        });
    }
    let mut seen = BTreeSet::new();
    let mut groups: BTreeMap<Option<ScannerId>, Vec<String>> = BTreeMap::new();
    for (index, (id, scanner)) in slides.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::Record {
                index,
                reason: alloc::format!("duplicate slide id {id:?}"),
            });
        }
        groups.entry(*scanner).or_default().push(id.clone());
    }
    let n = slides.len();
    let n_test = round_half_up(n as f64 * cfg.test_fraction) as usize;
    let n_val = round_half_up((n - n_test) as f64 * cfg.val_fraction) as usize;

    let mut rng = rng::seeded(cfg.seed);
    let mut members: Vec<Vec<String>> = groups.into_values().collect();
    for m in &mut members {
        m.sort();
        m.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let test_q = apportion(&sizes, cfg.test_fraction, n_test);
    let rest: Vec<usize> = sizes.iter().zip(&test_q).map(|(s, t)| s - t).collect();
    let val_q = apportion(&rest, cfg.val_fraction, n_val);

    let mut spec = SplitSpec {
        train_ids: Vec::new(),
        val_ids: Vec::new(),
        test_ids: Vec::new(),
        seed: cfg.seed,
    };
    for (g, m) in members.into_iter().enumerate() {
        let (t, v) = (test_q[g], val_q[g]);
        spec.test_ids.extend_from_slice(&m[..t]);
        spec.val_ids.extend_from_slice(&m[t..t + v]);
        spec.train_ids.extend_from_slice(&m[t + v..]);
    }
    spec.train_ids.sort();
    spec.val_ids.sort();
    spec.test_ids.sort();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn ids(n: usize, scanners: bool) -> Vec<(String, Option<ScannerId>)> {
        (0..n)
            .map(|i| (format!("s{i:03}"), scanners.then(|| ScannerId::ANNOTATED[i % 3])))
            .collect()
    }

    #[test]
    fn published_counts() {
        for scanners in [true, false] {
            let s = make_split(&ids(150, scanners), &SplitConfig::default()).unwrap();
            assert_eq!((s.test_ids.len(), s.train_ids.len(), s.val_ids.len()), (45, 84, 21));
        }
        let s = make_split(&ids(150, true), &SplitConfig::default()).unwrap();
        let per = |v: &[String], k: usize| v.iter().filter(|id| id[1..].parse::<usize>().unwrap() % 3 == k).count();
        for k in 0..3 {
            assert_eq!((per(&s.test_ids, k), per(&s.val_ids, k), per(&s.train_ids, k)), (15, 7, 28));
        }
    }

    #[test]
    fn small_case_and_errors() {
        let s = make_split(&ids(10, true), &SplitConfig::default()).unwrap();
        assert_eq!((s.test_ids.len(), s.train_ids.len(), s.val_ids.len()), (3, 6, 1));
        assert!(matches!(make_split(&ids(4, true), &SplitConfig::default()), Err(Error::TooFewSlides { .. })));
        let mut dup = ids(6, false);
        dup[5].0 = dup[0].0.clone();
        assert!(make_split(&dup, &SplitConfig::default()).is_err());
    }

    #[test]
    fn disjoint_exhaustive_deterministic() {
        let input = ids(37, true);
        let a = make_split(&input, &SplitConfig { seed: 5, ..Default::default() }).unwrap();
        let b = make_split(&input, &SplitConfig { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let c = make_split(&input, &SplitConfig { seed: 6, ..Default::default() }).unwrap();
        assert_ne!(a.test_ids, c.test_ids);
        let mut all: Vec<&String> = a.train_ids.iter().chain(&a.val_ids).chain(&a.test_ids).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 37);
        for (id, _) in &input {
            assert!(a.partition_of(id).is_some());
        }
    }
}
