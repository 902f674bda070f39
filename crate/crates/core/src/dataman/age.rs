use serde::{Deserialize, Serialize};

use super::DataError;

pub const MIN_AGE: u32 = 4;
pub const MAX_AGE: u32 = 16;
/// Oldest age of the young group.
pub const YOUNG_MAX: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    Young,
    Old,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 2] = [AgeGroup::Young, AgeGroup::Old];

    /// Class index used by the network: 0 young, 1 old.
    pub fn index(self) -> usize {
        match self {
            AgeGroup::Young => 0,
            AgeGroup::Old => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            AgeGroup::Young
        } else {
            AgeGroup::Old
        }
    }
}

pub fn compute_age(birth_year: i32, capture_year: i32) -> Result<u32, DataError> {
    let age = i64::from(capture_year) - i64::from(birth_year);
    if age < i64::from(MIN_AGE) || age > i64::from(MAX_AGE) {
        return Err(DataError::OutOfStudyRange(age));
    }
    Ok(age as u32)
}

pub fn assign_age_group(age: u32) -> Result<AgeGroup, DataError> {
    match age {
        MIN_AGE..=YOUNG_MAX => Ok(AgeGroup::Young),
        10..=MAX_AGE => Ok(AgeGroup::Old),
        _ => Err(DataError::OutOfStudyRange(i64::from(age))),
    }
}
