//! Case-level stratified k-fold splits with a held-out validation subset.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInfo {
    pub case_id: String,
    pub n_slides: usize,
    /// Mean slide target of the case, used for stratification.
    pub mean_target: f64,
}

/// Groups slides by case in order of first appearance.
pub fn cases_from_bags(bags: &[Bag]) -> Vec<CaseInfo> {
    let mut cases: Vec<CaseInfo> = Vec::new();
    for b in bags {
        match cases.iter_mut().find(|c| c.case_id == b.case_id()) {
            Some(c) => {
                c.mean_target += b.target().value();
                c.n_slides += 1;
            }
            None => cases.push(CaseInfo {
                case_id: b.case_id().into(),
                n_slides: 1,
                mean_target: b.target().value(),
            }),
        }
    }
    for c in &mut cases {
        c.mean_target /= c.n_slides as f64;
    }
    cases
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Share of all slides that landed in this fold's test set.
    pub test_slide_fraction: f64,
}

impl Fold {
    pub fn role_of(&self, case_id: &str) -> Option<&'static str> {
        let has = |v: &Vec<String>| v.iter().any(|c| c == case_id);
        if has(&self.test) {
            Some("test")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.train) {
            Some("train")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub strata_bins: usize,
    pub val_fraction: f64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Splits `bags` into (train, val, test) for fold `f`, keeping input order.
    pub fn split<'a>(
        &self,
        f: usize,
        bags: &'a [Bag],
    ) -> (Vec<&'a Bag>, Vec<&'a Bag>, Vec<&'a Bag>) {
        let fold = &self.folds[f];
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for b in bags {
            match fold.role_of(b.case_id()) {
                Some("test") => te.push(b),
                Some("val") => va.push(b),
                Some(_) => tr.push(b),
                None => {}
            }
        }
        (tr, va, te)
    }
}

pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

/// Builds `k` folds over cases so every case is tested exactly once.
///
/// Cases are binned into `strata_bins` quantile strata by mean target,
/// shuffled inside each stratum and dealt to the fold currently holding the
/// fewest slides. Within each fold's remaining cases, a systematic sample
/// over the stratified order becomes the validation set
/// (`round(0.15 * remaining)` cases).
pub fn make_cv_folds(
    cases: &[CaseInfo],
    k: usize,
    seed: u64,
    strata_bins: usize,
) -> Result<FoldPlan> {
    make_cv_folds_with(cases, k, seed, strata_bins, DEFAULT_VAL_FRACTION)
}

pub fn make_cv_folds_with(
    cases: &[CaseInfo],
    k: usize,
    seed: u64,
    strata_bins: usize,
    val_fraction: f64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    if cases.len() < k {
        return Err(Error::TooFewCases {
            cases: cases.len(),
            k,
        });
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidParameter(
            "val_fraction must be in [0, 1)".into(),
        ));
    }
    let bins = strata_bins.max(1);
    let n = cases.len();

    let mut by_target: Vec<usize> = (0..n).collect();
    by_target.sort_by(|&a, &b| {
        cases[a]
            .mean_target
            .total_cmp(&cases[b].mean_target)
            .then_with(|| cases[a].case_id.cmp(&cases[b].case_id))
    });
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (rank, &c) in by_target.iter().enumerate() {
        strata[rank * bins / n].push(c);
    }
    let mut r = rng::stream(seed, 0);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for s in &mut strata {
        s.shuffle(&mut r);
        order.extend_from_slice(s);
    }

    let total_slides: usize = cases.iter().map(|c| c.n_slides).sum();
    let mut load = vec![0usize; k];
    let mut fold_of = vec![0usize; n];
    for &c in &order {
        let f = (0..k).min_by_key(|&f| (load[f], f)).unwrap();
        fold_of[c] = f;
        load[f] += cases[c].n_slides;
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<String> = order
            .iter()
            .filter(|&&c| fold_of[c] == f)
            .map(|&c| cases[c].case_id.clone())
            .collect();
        let rest: Vec<usize> = order.iter().copied().filter(|&c| fold_of[c] != f).collect();
        let m = rest.len();
        let v = (math::round_half_up(val_fraction * m as f64) as usize).min(m.saturating_sub(1));
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (j, &c) in rest.iter().enumerate() {
            // picks exactly v of m positions, evenly spaced
            if v > 0 && (j + 1) * v / m > j * v / m {
                val.push(cases[c].case_id.clone());
            } else {
                train.push(cases[c].case_id.clone());
            }
        }
        let test_slide_fraction = load[f] as f64 / total_slides.max(1) as f64;
        folds.push(Fold {
            train,
            val,
            test,
            test_slide_fraction,
        });
    }
    Ok(FoldPlan {
        k,
        seed,
        strata_bins: bins,
        val_fraction,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use rand::Rng;

    fn cohort(n: usize, seed: u64) -> Vec<CaseInfo> {
        let mut r = rng::stream(seed, 1);
        (0..n)
            .map(|i| CaseInfo {
                case_id: format!("case_{i:04}"),
                n_slides: 1,
                mean_target: r.random_range(0.0..1.0),
            })
            .collect()
    }

    #[test]
    fn hundred_cases_five_folds() {
        let cases = cohort(100, 7);
        let plan = make_cv_folds(&cases, 5, 42, 4).unwrap();
        let mut seen = Vec::new();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 20);
            assert_eq!(fold.val.len(), 12);
            assert_eq!(fold.train.len(), 68);
            assert!((fold.test_slide_fraction - 0.2).abs() < 1e-12);
            seen.extend(fold.test.iter().cloned());
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn too_few_cases() {
        let cases = cohort(3, 1);
        assert!(matches!(
            make_cv_folds(&cases, 5, 0, 4),
            Err(Error::TooFewCases { cases: 3, k: 5 })
        ));
    }

    #[test]
    fn deterministic() {
        let cases = cohort(40, 3);
        assert_eq!(
            make_cv_folds(&cases, 5, 9, 4).unwrap(),
            make_cv_folds(&cases, 5, 9, 4).unwrap()
        );
        assert_ne!(
            make_cv_folds(&cases, 5, 9, 4).unwrap(),
            make_cv_folds(&cases, 5, 10, 4).unwrap()
        );
    }

    #[test]
    fn multi_slide_cases_stay_together() {
        let cases: Vec<CaseInfo> = (0..30)
            .map(|i| CaseInfo {
                case_id: format!("c{i}"),
                n_slides: 1 + i % 3,
                mean_target: (i as f64) / 30.0,
            })
            .collect();
        let plan = make_cv_folds(&cases, 5, 1, 4).unwrap();
        for fold in &plan.folds {
            let mut all: Vec<&String> = fold
                .train
                .iter()
                .chain(&fold.val)
                .chain(&fold.test)
                .collect();
            assert_eq!(all.len(), 30);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 30);
            assert!((fold.test_slide_fraction - 0.2).abs() < 0.05);
        }
    }
}
