use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        })
    }
}

impl FromStr for Split {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            _ => Err(DatasetError::Manifest(format!("unknown split {s:?}"))),
        }
    }
}

/// User counts per split and the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub validation: Vec<String>,
}

impl Splits {
    pub fn of(&self, user: &str) -> Option<Split> {
        let has = |v: &Vec<String>| v.iter().any(|u| u == user);
        if has(&self.train) {
            Some(Split::Train)
        } else if has(&self.test) {
            Some(Split::Test)
        } else if has(&self.validation) {
            Some(Split::Validation)
        } else {
            None
        }
    }

    pub fn users(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Validation => &self.validation,
        }
    }
}

/// Seeded shuffle of the sorted user list, cut into disjoint sets.
pub fn split_users(users: &[String], spec: &SplitSpec) -> Result<Splits, DatasetError> {
    let mut pool: Vec<String> = users.to_vec();
    pool.sort();
    pool.dedup();
    let needed = spec.train + spec.test + spec.validation;
    if needed > pool.len() {
        return Err(DatasetError::InsufficientUsers {
            needed,
            available: pool.len(),
        });
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut it = pool.into_iter();
    let mut take = |n: usize| -> Vec<String> { it.by_ref().take(n).collect() };
    Ok(Splits {
        train: take(spec.train),
        test: take(spec.test),
        validation: take(spec.validation),
    })
}

pub fn write_split_manifest<W: Write>(splits: &Splits, out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| DatasetError::Io(e.to_string());
    w.write_record(["user_id", "split"]).map_err(err)?;
    for split in [Split::Train, Split::Test, Split::Validation] {
        for u in splits.users(split) {
            w.write_record([u.as_str(), &split.to_string()]).map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_split_manifest<R: Read>(r: R) -> Result<Splits, DatasetError> {
    let mut by: BTreeMap<Split, Vec<String>> = BTreeMap::new();
    for rec in csv::Reader::from_reader(r).records() {
        let rec = rec.map_err(|e| DatasetError::Malformed {
            file: "splits".into(),
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let (Some(user), Some(split)) = (rec.get(0), rec.get(1)) else {
            return Err(DatasetError::Malformed {
                file: "splits".into(),
                line: rec.position().map_or(0, |p| p.line()),
                detail: "expected user_id,split".into(),
            });
        };
        by.entry(split.parse()?).or_default().push(user.to_string());
    }
    let mut take = |s| by.remove(&s).unwrap_or_default();
    Ok(Splits {
        train: take(Split::Train),
        test: take(Split::Test),
        validation: take(Split::Validation),
    })
}
