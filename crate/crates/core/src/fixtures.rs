//! Reference outcome records shipped with the crate.

use crate::error::Result;
use crate::measurement::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reference {
    CaseOneNm1,
    CaseOneNm4,
    CaseOneNm20,
    CaseTwoNm1,
    CaseTwoNm4,
    CaseTwoNm20,
    CaseTwoNm40,
    SingleShotA,
    SingleShotB,
}

impl Reference {
    pub const ALL: [Reference; 9] = [
        Reference::CaseOneNm1,
        Reference::CaseOneNm4,
        Reference::CaseOneNm20,
        Reference::CaseTwoNm1,
        Reference::CaseTwoNm4,
        Reference::CaseTwoNm20,
        Reference::CaseTwoNm40,
        Reference::SingleShotA,
        Reference::SingleShotB,
    ];

    /// File stem under `fixtures/`.
    pub fn name(self) -> &'static str {
        match self {
            Reference::CaseOneNm1 => "case-i-nm1",
            Reference::CaseOneNm4 => "case-i-nm4",
            Reference::CaseOneNm20 => "case-i-nm20",
            Reference::CaseTwoNm1 => "case-ii-nm1",
            Reference::CaseTwoNm4 => "case-ii-nm4",
            Reference::CaseTwoNm20 => "case-ii-nm20",
            Reference::CaseTwoNm40 => "case-ii-nm40",
            Reference::SingleShotA => "fig-s7a",
            Reference::SingleShotB => "fig-s7b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn json(self) -> &'static str {
        match self {
            Reference::CaseOneNm1 => include_str!("../fixtures/case-i-nm1.json"),
            Reference::CaseOneNm4 => include_str!("../fixtures/case-i-nm4.json"),
            Reference::CaseOneNm20 => include_str!("../fixtures/case-i-nm20.json"),
            Reference::CaseTwoNm1 => include_str!("../fixtures/case-ii-nm1.json"),
            Reference::CaseTwoNm4 => include_str!("../fixtures/case-ii-nm4.json"),
            Reference::CaseTwoNm20 => include_str!("../fixtures/case-ii-nm20.json"),
            Reference::CaseTwoNm40 => include_str!("../fixtures/case-ii-nm40.json"),
            Reference::SingleShotA => include_str!("../fixtures/fig-s7a.json"),
            Reference::SingleShotB => include_str!("../fixtures/fig-s7b.json"),
        }
    }

    pub fn load(self) -> Result<Dataset> {
        Dataset::from_json(self.json())
    }
}
