use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::age::AgeGroup;
use super::record::SampleRecord;
use super::DataError;

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn get(&self, s: Split) -> &BTreeSet<String> {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, s: Split) -> &mut BTreeSet<String> {
        match s {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn split_of(&self, subject: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.get(s).contains(subject))
    }

    /// Records whose subject belongs to split `s`, in manifest order.
    pub fn select<'a>(&self, records: &'a [SampleRecord], s: Split) -> Vec<&'a SampleRecord> {
        let set = self.get(s);
        records.iter().filter(|r| set.contains(&r.subject_id)).collect()
    }

    /// Image-count fraction of every split.
    pub fn image_fractions(&self, records: &[SampleRecord]) -> [f64; 3] {
        let n = records.len().max(1) as f64;
        Split::ALL.map(|s| self.select(records, s).len() as f64 / n)
    }
}

struct Subject {
    id: String,
    images: usize,
    groups: [bool; 2],
}

/// Shuffles subjects with `seed`, orders them by descending image count
/// (stable, so equal-sized subjects keep their shuffled order) and hands each
/// to the split furthest below its target image fraction. A final pass swaps
/// subjects to give every split both age groups where possible.
pub fn subject_exclusive_split(
    records: &[SampleRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment, DataError> {
    if ratios.iter().any(|&r| !(r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidParams(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut by_subject: BTreeMap<&str, Subject> = BTreeMap::new();
    for r in records {
        let s = by_subject.entry(&r.subject_id).or_insert_with(|| Subject {
            id: r.subject_id.clone(),
            images: 0,
            groups: [false; 2],
        });
        s.images += 1;
        s.groups[r.group().index()] = true;
    }
    if by_subject.len() < 3 {
        return Err(DataError::InsufficientSubjects(by_subject.len()));
    }
    let mut subjects: Vec<Subject> = by_subject.into_values().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    subjects.sort_by_key(|s| std::cmp::Reverse(s.images));

    let total = records.len() as f64;
    let mut counts = [0usize; 3];
    let mut members: [Vec<usize>; 3] = Default::default();
    for (k, subj) in subjects.iter().enumerate() {
        let remaining = subjects.len() - k;
        let empty: Vec<usize> = (0..3).filter(|&i| members[i].is_empty()).collect();
        let candidates: Vec<usize> = if remaining <= empty.len() { empty } else { vec![0, 1, 2] };
        let deficit = |i: usize| ratios[i] - counts[i] as f64 / total;
        let pick = candidates
            .into_iter()
            .fold(None::<usize>, |best, i| match best {
                Some(b) if deficit(b) >= deficit(i) => Some(b),
                _ => Some(i),
            })
            .expect("three candidate splits");
        counts[pick] += subj.images;
        members[pick].push(k);
    }

    balance_groups(&subjects, &mut members);

    let mut out = SplitAssignment::default();
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let set = out.get_mut(split);
        set.extend(members[i].iter().map(|&k| subjects[k].id.clone()));
    }
    Ok(out)
}

fn coverage(subjects: &[Subject], members: &[Vec<usize>; 3]) -> usize {
    members
        .iter()
        .map(|m| {
            (0..2)
                .filter(|&g| m.iter().any(|&k| subjects[k].groups[g]))
                .count()
        })
        .sum()
}

/// Swaps equally sized subjects between splits while that increases the
/// number of (split, age group) pairs represented.
fn balance_groups(subjects: &[Subject], members: &mut [Vec<usize>; 3]) {
    loop {
        let base = coverage(subjects, members);
        if base == 6 {
            return;
        }
        let mut improved = false;
        'search: for s in 0..3 {
            for g in AgeGroup::ALL.map(AgeGroup::index) {
                if members[s].iter().any(|&k| subjects[k].groups[g]) {
                    continue;
                }
                for t in (0..3).filter(|&t| t != s) {
                    for bi in 0..members[t].len() {
                        let b = members[t][bi];
                        if !subjects[b].groups[g] {
                            continue;
                        }
                        for ai in 0..members[s].len() {
                            let a = members[s][ai];
                            if subjects[a].images != subjects[b].images {
                                continue;
                            }
                            members[s][ai] = b;
                            members[t][bi] = a;
                            if coverage(subjects, members) > base {
                                improved = true;
                                break 'search;
                            }
                            members[s][ai] = a;
                            members[t][bi] = b;
                        }
                    }
                }
            }
        }
        if !improved {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataman::record::{EyeSide, Modality, Sensor};

    fn manifest(subjects: usize, per: usize) -> Vec<SampleRecord> {
        let mut v = Vec::new();
        for s in 0..subjects {
            for i in 0..per {
                v.push(
                    SampleRecord::new(
                        format!("S{s:03}"),
                        2000,
                        2004 + ((s + i) % 13) as i32,
                        Sensor::SensorA,
                        EyeSide::Left,
                        Modality::Eye,
                        format!("{s}_{i}.png"),
                    )
                    .unwrap(),
                );
            }
        }
        v
    }

    #[test]
    fn ten_by_ten() {
        let m = manifest(10, 10);
        let a = subject_exclusive_split(&m, DEFAULT_RATIOS, 42).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (8, 1, 1));
        let counts = Split::ALL.map(|s| a.select(&m, s).len());
        assert_eq!(counts, [80, 10, 10]);
    }

    #[test]
    fn three_subjects_cover_every_split() {
        let a = subject_exclusive_split(&manifest(3, 1), DEFAULT_RATIOS, 7).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (1, 1, 1));
    }

    #[test]
    fn two_subjects_rejected() {
        assert_eq!(
            subject_exclusive_split(&manifest(2, 5), DEFAULT_RATIOS, 1),
            Err(DataError::InsufficientSubjects(2))
        );
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = manifest(30, 4);
        let a = subject_exclusive_split(&m, DEFAULT_RATIOS, 5).unwrap();
        assert_eq!(a, subject_exclusive_split(&m, DEFAULT_RATIOS, 5).unwrap());
        assert!((0..10).any(|s| subject_exclusive_split(&m, DEFAULT_RATIOS, s).unwrap() != a));
    }
}
