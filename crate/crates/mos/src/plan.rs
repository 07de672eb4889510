use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MosError, Result};

/// Anchored exemplars shown before any scored item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    /// Version shown as the low anchor (score 1).
    pub low_version: String,
    /// Version shown as the high anchor (score 5).
    pub high_version: String,
    /// Exemplars per anchor.
    pub per_anchor: usize,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            low_version: "NN".into(),
            high_version: "HR".into(),
            per_anchor: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyPlan {
    /// Stimulus versions; every assigned image is rated once in each.
    pub versions: Vec<String>,
    /// Image ids of the study pool.
    pub images: Vec<String>,
    pub images_per_rater: usize,
    pub raters_per_image: usize,
    pub calibration: CalibrationPlan,
    pub seed: u64,
}

pub const DEFAULT_VERSIONS: [&str; 8] = ["NN", "bicubic", "M_p", "M_pva", "M_pca", "M_pcsa", "M_pcsva", "HR"];

impl Default for StudyPlan {
    fn default() -> Self {
        Self {
            versions: DEFAULT_VERSIONS.iter().map(|s| s.to_string()).collect(),
            images: Vec::new(),
            images_per_rater: 20,
            raters_per_image: 5,
            calibration: CalibrationPlan::default(),
            seed: 0,
        }
    }
}

impl StudyPlan {
    /// Default protocol over `images`.
    pub fn with_images(images: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            images: images.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: StudyPlan = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Rating items per session.
    pub fn rating_items(&self) -> usize {
        self.images_per_rater * self.versions.len()
    }

    pub fn calibration_items(&self) -> usize {
        2 * self.calibration.per_anchor
    }

    /// Sessions needed to give every image its full complement of raters.
    pub fn sessions_at_capacity(&self) -> usize {
        (self.images.len() * self.raters_per_image).div_ceil(self.images_per_rater.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(MosError::InvalidPlan(m));
        if self.versions.is_empty() {
            return invalid("no versions".into());
        }
        if self.versions.iter().collect::<BTreeSet<_>>().len() != self.versions.len() {
            return invalid("duplicate version labels".into());
        }
        if self.images.iter().collect::<BTreeSet<_>>().len() != self.images.len() {
            return invalid("duplicate image ids".into());
        }
        if self.images_per_rater == 0 || self.raters_per_image == 0 {
            return invalid("images_per_rater and raters_per_image must be positive".into());
        }
        if self.images_per_rater > self.images.len() {
            return invalid(format!(
                "{} images per rater but only {} images",
                self.images_per_rater,
                self.images.len()
            ));
        }
        if (self.images.len() * self.raters_per_image) % self.images_per_rater != 0 {
            return invalid(format!(
                "{} images x {} raters cannot be split into sessions of {}",
                self.images.len(),
                self.raters_per_image,
                self.images_per_rater
            ));
        }
        let c = &self.calibration;
        for v in [&c.low_version, &c.high_version] {
            if !self.versions.contains(v) {
                return invalid(format!("calibration version {v:?} is not a study version"));
            }
        }
        if c.per_anchor > self.images.len() {
            return invalid("more calibration exemplars than images".into());
        }
        // two images alternate at worst; one image cannot avoid repeating itself
        if self.images_per_rater < 2 && self.versions.len() > 1 {
            return invalid("need at least two images per rater to avoid adjacent repeats".into());
        }
        Ok(())
    }
}
