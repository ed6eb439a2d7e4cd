//! Modified k-fold time-series split.
//!
//! The time axis is cut into `k` contiguous folds. Split `s` (1-based)
//! trains on folds `1..=s`, validates on fold `s + 1` and tests on fold
//! `s + 2`, giving `k - 2` usable splits. Membership is decided by the
//! label month only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SampleSet;
use crate::time::{MonthRange, YearMonth};

pub const DEFAULT_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    /// 1-based fold number.
    pub index: usize,
    pub start: YearMonth,
    pub end: YearMonth,
    pub months: usize,
}

impl Fold {
    pub fn range(&self) -> MonthRange {
        MonthRange {
            start: self.start,
            end: self.end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// 1-based split number `s`.
    pub index: usize,
    pub train: Vec<usize>,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// First month of folds `2..=k`.
    pub fold_boundaries: Vec<YearMonth>,
    pub folds: Vec<Fold>,
    pub splits: Vec<Split>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Train,
    Val,
    Test,
    Unused,
}

/// Evenly cuts `timestamps` into `k` folds; the `n mod k` remainder months go
/// one each to the earliest folds.
pub fn make_fold_plan(timestamps: &[YearMonth], k: usize) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::argument(format!("k = {k}, need k >= 3")));
    }
    if timestamps.len() < k {
        return Err(Error::argument(format!(
            "{} timestamps cannot form {k} folds",
            timestamps.len()
        )));
    }
    if timestamps.windows(2).any(|w| w[0].add_months(1) != w[1]) {
        return Err(Error::argument("timestamps must be consecutive months"));
    }
    let n = timestamps.len();
    let (base, rem) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for f in 0..k {
        let months = base + usize::from(f < rem);
        folds.push(Fold {
            index: f + 1,
            start: timestamps[offset],
            end: timestamps[offset + months - 1],
            months,
        });
        offset += months;
    }
    let fold_boundaries = folds[1..].iter().map(|f| f.start).collect();
    let splits = (1..=k - 2)
        .map(|s| Split {
            index: s,
            train: (1..=s).collect(),
            val: s + 1,
            test: s + 2,
        })
        .collect();
    Ok(FoldPlan {
        k,
        fold_boundaries,
        folds,
        splits,
    })
}

impl FoldPlan {
    pub fn time_range(&self) -> MonthRange {
        MonthRange {
            start: self.folds[0].start,
            end: self.folds[self.k - 1].end,
        }
    }

    /// 1-based fold containing `t`.
    pub fn fold_of(&self, t: YearMonth) -> Option<usize> {
        self.folds.iter().find(|f| f.range().contains(t)).map(|f| f.index)
    }

    pub fn split(&self, s: usize) -> Result<&Split> {
        s.checked_sub(1)
            .and_then(|i| self.splits.get(i))
            .ok_or_else(|| Error::argument(format!("split {s} outside 1..={}", self.splits.len())))
    }

    pub fn fold(&self, index: usize) -> &Fold {
        &self.folds[index - 1]
    }

    /// Months covered by the training folds of split `s`.
    pub fn train_range(&self, s: usize) -> Result<MonthRange> {
        let split = self.split(s)?;
        Ok(MonthRange {
            start: self.fold(1).start,
            end: self.fold(*split.train.last().unwrap()).end,
        })
    }

    /// Label months used at all by split `s` (train through test fold).
    pub fn used_range(&self, s: usize) -> Result<MonthRange> {
        let split = self.split(s)?;
        Ok(MonthRange {
            start: self.fold(1).start,
            end: self.fold(split.test).end,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Role of a sample with label month `label_time` in split `s`.
pub fn assign(label_time: YearMonth, plan: &FoldPlan, s: usize) -> Result<Assignment> {
    let split = plan.split(s)?;
    let fold = plan
        .fold_of(label_time)
        .ok_or_else(|| Error::argument(format!("label month {label_time} outside the fold plan")))?;
    Ok(if fold <= s {
        Assignment::Train
    } else if fold == split.val {
        Assignment::Val
    } else if fold == split.test {
        Assignment::Test
    } else {
        Assignment::Unused
    })
}

/// Like [`assign`], but with `drop_straddling` a window whose first month falls
/// in an earlier fold than its label month is marked unused.
pub fn assign_window(
    label_time: YearMonth,
    window: usize,
    plan: &FoldPlan,
    s: usize,
    drop_straddling: bool,
) -> Result<Assignment> {
    let a = assign(label_time, plan, s)?;
    if drop_straddling && a != Assignment::Unused {
        let first = label_time.add_months(1 - window as i64);
        if plan.fold_of(first) != plan.fold_of(label_time) {
            return Ok(Assignment::Unused);
        }
    }
    Ok(a)
}

/// Indices of the train, validation and test samples of split `s`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn partition(
    samples: &SampleSet,
    plan: &FoldPlan,
    s: usize,
    drop_straddling: bool,
) -> Result<SplitIndices> {
    let mut out = SplitIndices::default();
    for (i, &t) in samples.label_times.iter().enumerate() {
        match assign_window(t, samples.window, plan, s, drop_straddling)? {
            Assignment::Train => out.train.push(i),
            Assignment::Val => out.val.push(i),
            Assignment::Test => out.test.push(i),
            Assignment::Unused => {}
        }
    }
    Ok(out)
}

/// Positive-label frequency per fold; `None` for folds without samples.
pub fn class_stats<I>(samples: I, plan: &FoldPlan) -> Result<Vec<Option<f64>>>
where
    I: IntoIterator<Item = (YearMonth, u8)>,
{
    let mut pos = vec![0usize; plan.k];
    let mut total = vec![0usize; plan.k];
    for (t, label) in samples {
        let f = plan
            .fold_of(t)
            .ok_or_else(|| Error::argument(format!("label month {t} outside the fold plan")))?;
        total[f - 1] += 1;
        pos[f - 1] += label as usize;
    }
    Ok(pos
        .iter()
        .zip(&total)
        .map(|(&p, &n)| (n > 0).then(|| p as f64 / n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn months(n: usize) -> Vec<YearMonth> {
        let start = YearMonth::new(1981, 1).unwrap();
        (0..n as i64).map(|i| start.add_months(i)).collect()
    }

    #[test]
    fn ten_months_k5() {
        let ts = months(10);
        let plan = make_fold_plan(&ts, 5).unwrap();
        assert!(plan.folds.iter().all(|f| f.months == 2));
        let s1 = plan.split(1).unwrap();
        assert_eq!((s1.train.clone(), s1.val, s1.test), (vec![1], 2, 3));
        assert_eq!(plan.fold(s1.val).start, ts[2]);
        assert_eq!(plan.fold(s1.test).end, ts[5]);
    }

    #[test]
    fn era_length_k5() {
        let ts = months(456);
        let plan = make_fold_plan(&ts, 5).unwrap();
        let sizes: Vec<_> = plan.folds.iter().map(|f| f.months).collect();
        assert_eq!(sizes, vec![92, 91, 91, 91, 91]);
        let tests: Vec<_> = plan.splits.iter().map(|s| s.test).collect();
        assert_eq!(tests, vec![3, 4, 5]);
        assert_eq!(plan.fold_boundaries[0], YearMonth::new(1988, 9).unwrap());
    }

    #[test]
    fn k3_single_split() {
        let plan = make_fold_plan(&months(9), 3).unwrap();
        assert_eq!(plan.splits.len(), 1);
        assert_eq!(plan.splits[0], Split { index: 1, train: vec![1], val: 2, test: 3 });
    }

    #[test]
    fn plan_errors() {
        assert!(make_fold_plan(&months(4), 5).is_err());
        assert!(make_fold_plan(&months(10), 2).is_err());
        let mut ts = months(10);
        ts.remove(4);
        assert!(make_fold_plan(&ts, 5).is_err());
    }

    #[test]
    fn assign_examples() {
        let ts = months(10);
        let plan = make_fold_plan(&ts, 5).unwrap();
        assert_eq!(assign(ts[0], &plan, 1).unwrap(), Assignment::Train);
        assert_eq!(assign(ts[9], &plan, 1).unwrap(), Assignment::Unused);
        assert_eq!(assign(ts[6], &plan, 2).unwrap(), Assignment::Test);
        assert_eq!(assign(ts[4], &plan, 2).unwrap(), Assignment::Val);
        assert!(assign(ts[0].add_months(-1), &plan, 1).is_err());
        assert!(assign(ts[0], &plan, 4).is_err());
    }

    #[test]
    fn straddling_windows() {
        let ts = months(20);
        let plan = make_fold_plan(&ts, 5).unwrap();
        // fold 2 starts at ts[4]; a 3-month window ending at ts[5] reaches into fold 1
        assert_eq!(assign_window(ts[5], 3, &plan, 1, false).unwrap(), Assignment::Val);
        assert_eq!(assign_window(ts[5], 3, &plan, 1, true).unwrap(), Assignment::Unused);
        assert_eq!(assign_window(ts[6], 3, &plan, 1, true).unwrap(), Assignment::Val);
    }

    #[test]
    fn class_stats_examples() {
        let ts = months(10);
        let plan = make_fold_plan(&ts, 5).unwrap();
        let samples = vec![(ts[0], 1), (ts[0], 0), (ts[1], 0), (ts[1], 0), (ts[2], 0), (ts[3], 0)];
        let stats = class_stats(samples, &plan).unwrap();
        assert_eq!(stats, vec![Some(0.25), Some(0.0), None, None, None]);
    }

    #[test]
    fn json_uses_iso_months() {
        let plan = make_fold_plan(&months(456), 5).unwrap();
        let json = plan.to_json().unwrap();
        assert!(json.contains("\"1988-09\""));
        assert_eq!(FoldPlan::from_json(&json).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn plan_invariants(n in 3usize..600, k in 3usize..9) {
            prop_assume!(n >= k);
            let ts = months(n);
            let plan = make_fold_plan(&ts, k).unwrap();
            prop_assert_eq!(plan.splits.len(), k - 2);
            let sizes: Vec<_> = plan.folds.iter().map(|f| f.months).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            // every month in exactly one fold
            for t in &ts {
                prop_assert_eq!(plan.folds.iter().filter(|f| f.range().contains(*t)).count(), 1);
            }
            for s in 1..=k - 2 {
                let mut groups: [Vec<YearMonth>; 3] = Default::default();
                for t in &ts {
                    match assign(*t, &plan, s).unwrap() {
                        Assignment::Train => groups[0].push(*t),
                        Assignment::Val => groups[1].push(*t),
                        Assignment::Test => groups[2].push(*t),
                        Assignment::Unused => {}
                    }
                }
                prop_assert!(groups.iter().all(|g| !g.is_empty()));
                prop_assert!(groups[0].iter().max() < groups[1].iter().min());
                prop_assert!(groups[1].iter().max() < groups[2].iter().min());
            }
        }
    }
}
