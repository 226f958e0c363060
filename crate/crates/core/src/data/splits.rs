//! Train/validation/test split conventions per dataset.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetTag;
use crate::error::{invalid, Result};

/// Folder-level hint from a `training/` or `test/` directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    /// Test fold for k-fold conventions.
    pub fold: Option<usize>,
    pub folds: Option<usize>,
}

impl SplitPlan {
    /// Checks pairwise disjointness and that no id appears twice.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id) {
                return Err(invalid!("split assigns id {id} twice"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOptions {
    /// Share of the training ids held out for validation, taken from the end.
    pub validation_fraction: f64,
    /// Test fold for k-fold conventions.
    pub fold: usize,
    /// Fold count override for k-fold conventions.
    pub folds: Option<usize>,
    /// Shuffle seed for conventions that shuffle.
    pub seed: u64,
    /// Training share for the custom convention without folder hints.
    pub custom_train_fraction: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            validation_fraction: 0.1,
            fold: 0,
            folds: None,
            seed: 0,
            custom_train_fraction: 0.8,
        }
    }
}

pub const STARE_FOLDS: usize = 20;

/// Orders ids with embedded numbers by value, so "2" sorts before "10".
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut a, mut b) = (a.as_bytes(), b.as_bytes());
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, _) => return Ordering::Less,
            (_, None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let da = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let db = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let (na, nb) = (trim_zeros(&a[..da]), trim_zeros(&b[..db]));
                let ord = na.len().cmp(&nb.len()).then_with(|| na.cmp(nb)).then_with(|| da.cmp(&db));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[da..];
                b = &b[db..];
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let z = d.iter().take_while(|&&c| c == b'0').count();
    &d[z.min(d.len().saturating_sub(1))..]
}

fn sorted(ids: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v
}

fn round_share(n: usize, num: usize, den: usize) -> usize {
    ((n * num) as f64 / den as f64).round() as usize
}

/// Moves the last `round(fraction * |train|)` training ids to validation.
fn carve_validation(mut train: Vec<String>, fraction: f64) -> (Vec<String>, Vec<String>) {
    let k = ((train.len() as f64 * fraction).round() as usize).min(train.len().saturating_sub(1));
    let validation = train.split_off(train.len() - k);
    (train, validation)
}

/// Splits `ids` following the dataset's convention.
///
/// DRIVE uses folder hints when present, otherwise the first half of the
/// sorted ids is test. CHASE trains on the first 20/28. STARE holds out one
/// of `k` contiguous folds. DCA1 shuffles with the seed and trains on
/// 104/134. Custom uses folder hints or `custom_train_fraction`.
pub fn make_splits(tag: DatasetTag, ids: &[(&str, Option<Subset>)], opts: &SplitOptions) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&opts.validation_fraction) {
        return Err(invalid!("validation fraction must lie in [0, 1)"));
    }
    let unique: BTreeSet<&str> = ids.iter().map(|(id, _)| *id).collect();
    if unique.len() != ids.len() {
        return Err(invalid!("duplicate sample ids"));
    }
    let all: Vec<&str> = ids.iter().map(|(id, _)| *id).collect();
    let hinted = ids.iter().all(|(_, h)| h.is_some()) && !ids.is_empty();
    let by_hint = |want: Subset| -> Vec<String> {
        let v: Vec<&str> = ids.iter().filter(|(_, h)| *h == Some(want)).map(|(id, _)| *id).collect();
        sorted(&v)
    };
    let n = all.len();
    let (mut fold, mut folds) = (None, None);
    let (train, test) = match tag {
        DatasetTag::Drive | DatasetTag::Custom if hinted => (by_hint(Subset::Train), by_hint(Subset::Test)),
        DatasetTag::Drive => {
            let mut s = sorted(&all);
            let train = s.split_off(n / 2);
            (train, s)
        }
        DatasetTag::Chase => {
            let mut s = sorted(&all);
            let test = s.split_off(round_share(n, 20, 28));
            (s, test)
        }
        DatasetTag::Stare => {
            let k = opts.folds.unwrap_or(STARE_FOLDS).min(n);
            if k < 2 {
                return Err(invalid!("k-fold split needs at least 2 samples"));
            }
            if opts.fold >= k {
                return Err(invalid!("fold {} out of range for {k} folds", opts.fold));
            }
            let s = sorted(&all);
            let (lo, hi) = (opts.fold * n / k, (opts.fold + 1) * n / k);
            fold = Some(opts.fold);
            folds = Some(k);
            let test = s[lo..hi].to_vec();
            let train = s[..lo].iter().chain(&s[hi..]).cloned().collect();
            (train, test)
        }
        DatasetTag::Dca1 => {
            let mut s = sorted(&all);
            s.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
            let test = s.split_off(round_share(n, 104, 134));
            (s, test)
        }
        DatasetTag::Custom => {
            let mut s = sorted(&all);
            let test = s.split_off((n as f64 * opts.custom_train_fraction).round() as usize);
            (s, test)
        }
    };
    let (train, validation) = carve_validation(train, opts.validation_fraction);
    let plan = SplitPlan {
        train,
        validation,
        test,
        fold,
        folds,
    };
    plan.check_disjoint()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize, fmt: impl Fn(usize) -> String) -> Vec<String> {
        (1..=n).map(fmt).collect()
    }

    fn plan(tag: DatasetTag, names: &[String], opts: &SplitOptions) -> SplitPlan {
        let v: Vec<(&str, Option<Subset>)> = names.iter().map(|s| (s.as_str(), None)).collect();
        make_splits(tag, &v, opts).unwrap()
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["10", "2", "1", "im0010", "im0002", "a"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["1", "2", "10", "a", "im0002", "im0010"]);
        assert_eq!(natural_cmp("01", "1"), Ordering::Greater);
    }

    #[test]
    fn drive_twenty_twenty() {
        let names = ids(40, |i| format!("{i:02}"));
        let p = plan(DatasetTag::Drive, &names, &SplitOptions::default());
        assert_eq!(p.test.len(), 20);
        assert_eq!(p.train.len() + p.validation.len(), 20);
        assert_eq!(p.validation.len(), 2);
        assert_eq!(p.test[0], "01");
        assert_eq!(p.validation, ["39", "40"]);
    }

    #[test]
    fn drive_hints_win() {
        let v: Vec<(&str, Option<Subset>)> = vec![("01", Some(Subset::Train)), ("02", Some(Subset::Test)), ("03", Some(Subset::Train))];
        let opts = SplitOptions {
            validation_fraction: 0.0,
            ..Default::default()
        };
        let p = make_splits(DatasetTag::Drive, &v, &opts).unwrap();
        assert_eq!(p.train, ["01", "03"]);
        assert_eq!(p.test, ["02"]);
    }

    #[test]
    fn chase_twenty_eight() {
        let names = ids(28, |i| format!("Image_{:02}{}", (i + 1) / 2, if i % 2 == 1 { "L" } else { "R" }));
        let p = plan(DatasetTag::Chase, &names, &SplitOptions::default());
        assert_eq!(p.train.len() + p.validation.len(), 20);
        assert_eq!(p.test.len(), 8);
    }

    #[test]
    fn stare_folds_partition() {
        let names = ids(20, |i| format!("im{i:04}"));
        let mut tests = Vec::new();
        for fold in 0..20 {
            let opts = SplitOptions {
                fold,
                ..Default::default()
            };
            let p = plan(DatasetTag::Stare, &names, &opts);
            assert_eq!(p.test.len(), 1);
            assert_eq!(p.len(), 20);
            tests.extend(p.test);
        }
        tests.sort();
        assert_eq!(tests, names);
        let bad = SplitOptions {
            fold: 20,
            ..Default::default()
        };
        let v: Vec<(&str, Option<Subset>)> = names.iter().map(|s| (s.as_str(), None)).collect();
        assert!(make_splits(DatasetTag::Stare, &v, &bad).is_err());
    }

    #[test]
    fn dca1_seeded() {
        let names = ids(134, |i| i.to_string());
        let a = plan(DatasetTag::Dca1, &names, &SplitOptions::default());
        assert_eq!(a.train.len() + a.validation.len(), 104);
        assert_eq!(a.test.len(), 30);
        assert_eq!(a, plan(DatasetTag::Dca1, &names, &SplitOptions::default()));
        let other = SplitOptions {
            seed: 1,
            ..Default::default()
        };
        assert_ne!(a.test, plan(DatasetTag::Dca1, &names, &other).test);
    }

    #[test]
    fn duplicates_rejected() {
        let v = vec![("a", None), ("a", None)];
        assert!(make_splits(DatasetTag::Custom, &v, &SplitOptions::default()).is_err());
    }

    #[test]
    fn validation_never_empties_train() {
        let names = ids(2, |i| i.to_string());
        let opts = SplitOptions {
            validation_fraction: 0.9,
            custom_train_fraction: 0.5,
            ..Default::default()
        };
        let p = plan(DatasetTag::Custom, &names, &opts);
        assert_eq!(p.train.len(), 1);
        assert!(p.validation.is_empty());
    }
}
