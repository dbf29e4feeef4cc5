//! Rolling-window evaluation folds: the training range grows by one month
//! per fold and the following month is the test set. The chronologically
//! last slice of training windows is reserved for threshold tuning.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

use crate::domain::{CellRecord, TimeWindow};

#[derive(Debug, Error, PartialEq)]
pub enum RollingError {
    #[error("need at least {need} months for an initial train length of {initial}, got {got}")]
    TooFewMonths {
        need: usize,
        initial: usize,
        got: usize,
    },
    #[error("initial train length must be at least 1")]
    ZeroInitial,
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn of(date: NaiveDate) -> Self {
        Month {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn next(&self) -> Month {
        if self.month == 12 {
            Month {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Month {
                year: self.year,
                month: self.month + 1,
            }
        }
    }
}

impl std::fmt::Display for Month {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// One rolling fold: everything in `train_months` trains (with a validation
/// tail), `test_month` evaluates.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub index: usize,
    pub train_months: Vec<Month>,
    pub test_month: Month,
}

/// Expanding-window folds over chronologically sorted months:
/// (m1..m10 -> m11), (m1..m11 -> m12), and so on.
pub fn rolling_folds(months: &[Month], initial_train: usize) -> Result<Vec<Fold>, RollingError> {
    if initial_train == 0 {
        return Err(RollingError::ZeroInitial);
    }
    if months.len() <= initial_train {
        return Err(RollingError::TooFewMonths {
            need: initial_train + 1,
            initial: initial_train,
            got: months.len(),
        });
    }
    debug_assert!(months.windows(2).all(|w| w[0] < w[1]), "months must be sorted");
    Ok((initial_train..months.len())
        .map(|t| Fold {
            index: t - initial_train,
            train_months: months[..t].to_vec(),
            test_month: months[t],
        })
        .collect())
}

/// Distinct months present in a record set, sorted.
pub fn months_of(records: &[CellRecord]) -> Vec<Month> {
    let set: BTreeSet<Month> = records.iter().map(|r| Month::of(r.window.date)).collect();
    set.into_iter().collect()
}

/// Chronological train/validation split of a fold's training windows: the
/// last `validation_fraction` of distinct windows (at least one, and at least
/// one left for training) is the validation set.
pub fn split_validation(
    windows: &BTreeSet<TimeWindow>,
    validation_fraction: f64,
) -> (BTreeSet<TimeWindow>, BTreeSet<TimeWindow>) {
    let n = windows.len();
    if n < 2 {
        return (windows.clone(), BTreeSet::new());
    }
    let val = (((n as f64) * validation_fraction).round() as usize).clamp(1, n - 1);
    let cut = n - val;
    let mut train = BTreeSet::new();
    let mut validation = BTreeSet::new();
    for (i, w) in windows.iter().enumerate() {
        if i < cut {
            train.insert(*w);
        } else {
            validation.insert(*w);
        }
    }
    (train, validation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn months(n: usize) -> Vec<Month> {
        let mut out = Vec::new();
        let mut m = Month { year: 2022, month: 1 };
        for _ in 0..n {
            out.push(m);
            m = m.next();
        }
        out
    }

    #[test]
    fn fourteen_months_four_folds() {
        let folds = rolling_folds(&months(14), 10).unwrap();
        assert_eq!(folds.len(), 4);
        assert_eq!(folds[0].train_months.len(), 10);
        assert_eq!(folds[0].test_month, Month { year: 2022, month: 11 });
        assert_eq!(folds[3].train_months.len(), 13);
        assert_eq!(folds[3].test_month, Month { year: 2023, month: 2 });
    }

    #[test]
    fn eleven_months_one_fold() {
        let folds = rolling_folds(&months(11), 10).unwrap();
        assert_eq!(folds.len(), 1);
        assert_eq!(folds[0].train_months, months(10));
    }

    #[test]
    fn ten_months_is_an_error() {
        let e = rolling_folds(&months(10), 10).unwrap_err();
        assert_eq!(
            e,
            RollingError::TooFewMonths {
                need: 11,
                initial: 10,
                got: 10
            }
        );
    }

    #[test]
    fn folds_never_overlap_their_test_month() {
        for initial in [3usize, 10] {
            let folds = rolling_folds(&months(16), initial).unwrap();
            for f in &folds {
                assert!(f.train_months.iter().all(|m| *m < f.test_month));
            }
            // Consecutive folds extend training by exactly the previous test
            // month's predecessor... i.e. one month.
            for w in folds.windows(2) {
                assert_eq!(w[0].train_months.len() + 1, w[1].train_months.len());
            }
        }
    }

    #[test]
    fn validation_split_is_chronological_tail() {
        use chrono::NaiveDate;
        let mut windows = BTreeSet::new();
        for d in 1..=10u32 {
            for i in 0..6u8 {
                windows.insert(TimeWindow {
                    date: NaiveDate::from_ymd_opt(2022, 1, d).unwrap(),
                    index: i,
                });
            }
        }
        let (train, val) = split_validation(&windows, 0.2);
        assert_eq!(val.len(), 12);
        assert_eq!(train.len(), 48);
        let max_train = train.iter().max().unwrap();
        let min_val = val.iter().min().unwrap();
        assert!(max_train < min_val);
    }

    #[test]
    fn month_rollover() {
        let m = Month { year: 2022, month: 12 };
        assert_eq!(m.next(), Month { year: 2023, month: 1 });
        assert_eq!(m.to_string(), "2022-12");
    }
}
