use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, ValidationError};

/// A fact treated as established in later rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFact")]
pub struct ConfirmedFact {
    statement: String,
    region: Option<BoundingBox>,
    first_confirmed_round: u32,
}

impl ConfirmedFact {
    pub fn new(
        statement: impl Into<String>,
        region: Option<BoundingBox>,
        first_confirmed_round: u32,
    ) -> Result<Self, ValidationError> {
        let statement = statement.into().trim().to_string();
        if statement.is_empty() {
            return Err(ValidationError::EmptyStatement);
        }
        Ok(Self {
            statement,
            region,
            first_confirmed_round: first_confirmed_round.max(1),
        })
    }

    pub fn statement(&self) -> &str {
        &self.statement
    }
    pub fn region(&self) -> Option<BoundingBox> {
        self.region
    }
    pub fn first_confirmed_round(&self) -> u32 {
        self.first_confirmed_round
    }
}

/// A disagreement between traces, with a pointer to where it can be settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConflict")]
pub struct OpenConflict {
    claims: Vec<String>,
    directive_text: String,
    directive_region: Option<BoundingBox>,
}

impl OpenConflict {
    pub fn new(
        claims: Vec<String>,
        directive_text: impl Into<String>,
        directive_region: Option<BoundingBox>,
    ) -> Result<Self, ValidationError> {
        let claims: Vec<String> = claims.into_iter().map(|c| c.trim().to_string()).collect();
        if claims.iter().any(|c| c.is_empty()) {
            return Err(ValidationError::EmptyStatement);
        }
        let mut seen = BTreeSet::new();
        for c in &claims {
            if !seen.insert(c.as_str()) {
                return Err(ValidationError::DuplicateClaim(c.clone()));
            }
        }
        if claims.len() < 2 {
            return Err(ValidationError::TooFewClaims(claims.len()));
        }
        Ok(Self {
            claims,
            directive_text: directive_text.into().trim().to_string(),
            directive_region,
        })
    }

    pub fn claims(&self) -> &[String] {
        &self.claims
    }
    pub fn directive_text(&self) -> &str {
        &self.directive_text
    }
    pub fn directive_region(&self) -> Option<BoundingBox> {
        self.directive_region
    }
}

/// The two-tier knowledge state carried between rounds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawMemory")]
pub struct KnowledgeMemory {
    confirmed: Vec<ConfirmedFact>,
    conflicts: Vec<OpenConflict>,
    round: u32,
}

impl KnowledgeMemory {
    /// The empty initial memory.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(
        confirmed: Vec<ConfirmedFact>,
        conflicts: Vec<OpenConflict>,
        round: u32,
    ) -> Result<Self, ValidationError> {
        let m = Self {
            confirmed,
            conflicts,
            round,
        };
        m.validate()?;
        Ok(m)
    }

    /// Check tier disjointness and the round-0 rule.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.round == 0 && !self.is_empty() {
            return Err(ValidationError::NonEmptyInitialMemory);
        }
        let facts = self.fact_statements();
        for claim in self.conflicts.iter().flat_map(|c| c.claims.iter()) {
            if facts.contains(claim.as_str()) {
                return Err(ValidationError::TierOverlap(claim.clone()));
            }
        }
        Ok(())
    }

    pub fn confirmed(&self) -> &[ConfirmedFact] {
        &self.confirmed
    }
    pub fn conflicts(&self) -> &[OpenConflict] {
        &self.conflicts
    }
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_empty(&self) -> bool {
        self.confirmed.is_empty() && self.conflicts.is_empty()
    }

    pub fn fact_statements(&self) -> BTreeSet<&str> {
        self.confirmed
            .iter()
            .map(|f| f.statement.as_str())
            .collect()
    }

    pub fn claim_statements(&self) -> BTreeSet<&str> {
        self.conflicts
            .iter()
            .flat_map(|c| c.claims.iter().map(String::as_str))
            .collect()
    }

    pub fn has_fact(&self, statement: &str) -> bool {
        self.confirmed.iter().any(|f| f.statement == statement)
    }

    pub fn has_claim(&self, statement: &str) -> bool {
        self.conflicts
            .iter()
            .any(|c| c.claims.iter().any(|s| s == statement))
    }
}

#[derive(Deserialize)]
struct RawFact {
    statement: String,
    region: Option<BoundingBox>,
    first_confirmed_round: u32,
}

impl TryFrom<RawFact> for ConfirmedFact {
    type Error = ValidationError;
    fn try_from(r: RawFact) -> Result<Self, Self::Error> {
        ConfirmedFact::new(r.statement, r.region, r.first_confirmed_round)
    }
}

#[derive(Deserialize)]
struct RawConflict {
    claims: Vec<String>,
    directive_text: String,
    directive_region: Option<BoundingBox>,
}

impl TryFrom<RawConflict> for OpenConflict {
    type Error = ValidationError;
    fn try_from(r: RawConflict) -> Result<Self, Self::Error> {
        OpenConflict::new(r.claims, r.directive_text, r.directive_region)
    }
}

#[derive(Deserialize)]
struct RawMemory {
    confirmed: Vec<ConfirmedFact>,
    conflicts: Vec<OpenConflict>,
    round: u32,
}

impl TryFrom<RawMemory> for KnowledgeMemory {
    type Error = ValidationError;
    fn try_from(r: RawMemory) -> Result<Self, Self::Error> {
        KnowledgeMemory::new(r.confirmed, r.conflicts, r.round)
    }
}


/// How a statement moved between two consecutive memory states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Kept in the same tier.
    Carried,
    /// Confirmed fact that became a conflict claim.
    Demoted,
    /// Conflict claim that became a confirmed fact.
    Promoted,
    NewFact,
    NewConflict,
    /// Present before, absent now.
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub statement: String,
    pub kind: TransitionKind,
}
