//! Synthetic grounding problems and agent policies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::BoundingBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("region {0:?} is empty or outside the grid")]
    BadRegion(CellRect),
    #[error("delta must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("distractor `{0}` overlaps the evidence region at IoU >= delta")]
    AmbiguousDistractor(String),
    #[error("distractor answers must be distinct from each other and from the true answer")]
    DuplicateAnswer,
    #[error("distractor weights must be positive and finite")]
    BadWeight,
    #[error("need at least one distractor")]
    NoDistractors,
    #[error("policy needs 0 < p <= p_g <= 1 and probabilities in [0, 1]: {0}")]
    BadPolicy(String),
}

/// Half-open cell rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CellRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    fn to_bbox(self, grid: (u32, u32)) -> BoundingBox {
        let (w, h) = (grid.0 as f64, grid.1 as f64);
        BoundingBox::new(
            self.x0 as f64 / w,
            self.y0 as f64 / h,
            self.x1 as f64 / w,
            self.y1 as f64 / h,
        )
        .expect("validated cell rectangles are non-degenerate")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub region: CellRect,
    /// Answer a trace gives after zooming here.
    pub answer: String,
    /// Relative attraction for traces that miss the evidence.
    pub weight: f64,
}

/// A grid image with one evidence region and several distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub grid: (u32, u32),
    pub evidence: CellRect,
    pub answer: String,
    pub distractors: Vec<Distractor>,
    /// Localization threshold: a zoom counts as a hit when its IoU with the
    /// evidence region is at least `delta`.
    pub delta: f64,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let in_grid =
            |r: &CellRect| r.x0 < r.x1 && r.y0 < r.y1 && r.x1 <= self.grid.0 && r.y1 <= self.grid.1;
        if !in_grid(&self.evidence) {
            return Err(SceneError::BadRegion(self.evidence));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(SceneError::BadDelta(self.delta));
        }
        if self.distractors.is_empty() {
            return Err(SceneError::NoDistractors);
        }
        let mut answers = vec![self.answer.as_str()];
        let truth = self.evidence_box();
        for d in &self.distractors {
            if !in_grid(&d.region) {
                return Err(SceneError::BadRegion(d.region));
            }
            if !(d.weight > 0.0 && d.weight.is_finite()) {
                return Err(SceneError::BadWeight);
            }
            if d.region.to_bbox(self.grid).iou(&truth) >= self.delta {
                return Err(SceneError::AmbiguousDistractor(d.answer.clone()));
            }
            if answers.contains(&d.answer.as_str()) {
                return Err(SceneError::DuplicateAnswer);
            }
            answers.push(&d.answer);
        }
        Ok(())
    }

    pub fn evidence_box(&self) -> BoundingBox {
        self.evidence.to_bbox(self.grid)
    }

    pub fn distractor_box(&self, i: usize) -> BoundingBox {
        self.distractors[i].region.to_bbox(self.grid)
    }

    /// The answer a trace reads off after zooming into `proposal`: the true
    /// answer on a hit, else the answer of the best-overlapping distractor
    /// above threshold.
    pub fn read(&self, proposal: &BoundingBox) -> Option<&str> {
        if proposal.iou(&self.evidence_box()) >= self.delta {
            return Some(&self.answer);
        }
        (0..self.distractors.len())
            .map(|i| (i, proposal.iou(&self.distractor_box(i))))
            .filter(|&(_, iou)| iou >= self.delta)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| self.distractors[i].answer.as_str())
    }

    /// Index of the distractor picked by a uniform draw `u`, in proportion to
    /// the weights.
    pub fn pick_distractor(&self, u: f64) -> usize {
        let total: f64 = self.distractors.iter().map(|d| d.weight).sum();
        let mut acc = 0.0;
        for (i, d) in self.distractors.iter().enumerate() {
            acc += d.weight / total;
            if u < acc {
                return i;
            }
        }
        self.distractors.len() - 1
    }

    /// Most attractive distractor; the lowest index wins ties.
    pub fn dominant_distractor(&self) -> usize {
        let mut best = 0;
        for (i, d) in self.distractors.iter().enumerate() {
            if d.weight > self.distractors[best].weight {
                best = i;
            }
        }
        best
    }
}

impl Default for SyntheticScene {
    /// 16x16 grid, a 2x2 evidence patch, one salient distractor drawing
    /// three times the traffic of each of two minor ones.
    fn default() -> Self {
        Self {
            grid: (16, 16),
            evidence: CellRect::new(11, 3, 13, 5),
            answer: "B".into(),
            distractors: vec![
                Distractor {
                    region: CellRect::new(2, 2, 5, 5),
                    answer: "A".into(),
                    weight: 3.0,
                },
                Distractor {
                    region: CellRect::new(3, 10, 5, 12),
                    answer: "C".into(),
                    weight: 1.0,
                },
                Distractor {
                    region: CellRect::new(10, 11, 12, 13),
                    answer: "D".into(),
                    weight: 1.0,
                },
            ],
            delta: 0.5,
        }
    }
}

/// Uniform distribution over `[lo, hi)` nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRange {
    pub lo: f64,
    pub hi: f64,
}

impl EntropyRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

/// How simulated traces find evidence and how confident they sound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    /// Hit probability without useful memory.
    pub p: f64,
    /// Hit probability for guided traces when the key fact is confirmed.
    pub p_guided: f64,
    /// Hit probability for guided traces when a false fact is confirmed.
    pub p_misled: f64,
    /// Peak-token entropy of traces that found the evidence.
    pub correct_entropy: EntropyRange,
    /// Peak-token entropy of traces that did not.
    pub incorrect_entropy: EntropyRange,
    /// Share of wrong traces that are confidently wrong, drawing their peak
    /// entropy from the correct range instead.
    pub overconfidence: f64,
    /// Per-round probability that every fresh trace is drawn to the
    /// dominant distractor together.
    pub shared_failure: f64,
    /// Tokens per trace besides the peak token, each at entropy
    /// uniform on `[0, background_entropy)`.
    pub background_tokens: usize,
    pub background_entropy: f64,
}

impl AgentPolicy {
    pub fn new(p: f64, p_guided: f64) -> Self {
        Self {
            p,
            p_guided,
            p_misled: p / 2.0,
            ..Self::default()
        }
    }

    /// Correct and incorrect traces never share an entropy value.
    pub fn separated(mut self) -> Self {
        self.correct_entropy = EntropyRange::new(0.1, 0.5);
        self.incorrect_entropy = EntropyRange::new(0.6, 1.3);
        self.overconfidence = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let ok = self.p > 0.0
            && self.p <= self.p_guided
            && self.p_guided <= 1.0
            && prob(self.p_misled)
            && prob(self.overconfidence)
            && prob(self.shared_failure)
            && self.background_entropy >= 0.0
            && [self.correct_entropy, self.incorrect_entropy]
                .iter()
                .all(|r| r.lo >= 0.0 && r.lo <= r.hi && r.hi.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SceneError::BadPolicy(format!("{self:?}")))
        }
    }
}

impl Default for AgentPolicy {
    fn default() -> Self {
        Self {
            p: 0.3,
            p_guided: 0.8,
            p_misled: 0.15,
            correct_entropy: EntropyRange::new(0.1, 0.6),
            incorrect_entropy: EntropyRange::new(0.5, 1.3),
            overconfidence: 0.2,
            shared_failure: 0.0,
            background_tokens: 9,
            background_entropy: 0.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_is_valid() {
        let s = SyntheticScene::default();
        s.validate().unwrap();
        assert_eq!(s.read(&s.evidence_box()), Some("B"));
        assert_eq!(s.read(&s.distractor_box(0)), Some("A"));
        assert_eq!(
            s.read(&BoundingBox::new(0.0, 0.9, 0.05, 1.0).unwrap()),
            None
        );
        assert_eq!(s.dominant_distractor(), 0);
        AgentPolicy::default().validate().unwrap();
    }

    #[test]
    fn invalid_scenes() {
        let s = SyntheticScene {
            delta: 0.0,
            ..SyntheticScene::default()
        };
        assert!(s.validate().is_err());
        let mut s = SyntheticScene::default();
        s.distractors[1].region = s.evidence;
        assert!(matches!(
            s.validate(),
            Err(SceneError::AmbiguousDistractor(_))
        ));
        let s = SyntheticScene {
            evidence: CellRect::new(3, 3, 3, 5),
            ..SyntheticScene::default()
        };
        assert!(s.validate().is_err());
        let mut s = SyntheticScene::default();
        s.distractors[2].answer = "B".into();
        assert_eq!(s.validate(), Err(SceneError::DuplicateAnswer));
        assert!(AgentPolicy::new(0.9, 0.5).validate().is_err());
    }

    #[test]
    fn distractor_pick_follows_weights() {
        let s = SyntheticScene::default();
        assert_eq!(s.pick_distractor(0.0), 0);
        assert_eq!(s.pick_distractor(0.59), 0);
        assert_eq!(s.pick_distractor(0.61), 1);
        assert_eq!(s.pick_distractor(0.81), 2);
        assert_eq!(s.pick_distractor(0.999_999), 2);
    }
}
