use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FilterError;
use crate::metrics::OverlapMode;
use crate::textproc::{WhLexicon, DEFAULT_WH_WORDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Interrogative,
    GoldAgreement,
    EntityConsistency,
    Dedup,
    OptNgramMetrics,
    OptPersonLocation,
    OptReaderScore,
    OptWmd,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Interrogative,
        Stage::GoldAgreement,
        Stage::EntityConsistency,
        Stage::Dedup,
        Stage::OptNgramMetrics,
        Stage::OptPersonLocation,
        Stage::OptReaderScore,
        Stage::OptWmd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Interrogative => "interrogative",
            Stage::GoldAgreement => "gold_agreement",
            Stage::EntityConsistency => "entity_consistency",
            Stage::Dedup => "dedup",
            Stage::OptNgramMetrics => "opt_ngram_metrics",
            Stage::OptPersonLocation => "opt_person_location",
            Stage::OptReaderScore => "opt_reader_score",
            Stage::OptWmd => "opt_wmd",
        }
    }

    pub fn is_optional(self) -> bool {
        !matches!(
            self,
            Stage::Interrogative | Stage::GoldAgreement | Stage::EntityConsistency | Stage::Dedup
        )
    }

    /// Stages that need the reader's answer.
    pub fn needs_gold(self) -> bool {
        matches!(
            self,
            Stage::GoldAgreement | Stage::OptNgramMetrics | Stage::OptReaderScore | Stage::OptWmd
        )
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStage {
    pub stage: Stage,
    pub enabled: bool,
}

/// Stage order and enable flags. Per-triplet stages run in list order;
/// dedup runs over each passage group afterwards and must come last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<PlannedStage>,
}

impl Default for StagePlan {
    fn default() -> Self {
        let order = [
            Stage::Interrogative,
            Stage::GoldAgreement,
            Stage::OptNgramMetrics,
            Stage::OptReaderScore,
            Stage::OptWmd,
            Stage::EntityConsistency,
            Stage::OptPersonLocation,
            Stage::Dedup,
        ];
        StagePlan {
            stages: order
                .into_iter()
                .map(|stage| PlannedStage {
                    stage,
                    enabled: !stage.is_optional(),
                })
                .collect(),
        }
    }
}

impl StagePlan {
    /// Default order with exactly `enabled` switched on.
    pub fn only(enabled: &[Stage]) -> Self {
        let mut plan = StagePlan::default();
        for s in &mut plan.stages {
            s.enabled = enabled.contains(&s.stage);
        }
        plan
    }

    pub fn none() -> Self {
        StagePlan::only(&[])
    }

    pub fn is_enabled(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage && s.enabled)
    }

    pub fn set_enabled(&mut self, stage: Stage, enabled: bool) {
        match self.stages.iter_mut().find(|s| s.stage == stage) {
            Some(s) => s.enabled = enabled,
            None if stage == Stage::Dedup => self.stages.push(PlannedStage { stage, enabled }),
            None => {
                let at = self
                    .stages
                    .iter()
                    .position(|s| s.stage == Stage::Dedup)
                    .unwrap_or(self.stages.len());
                self.stages.insert(at, PlannedStage { stage, enabled });
            }
        }
    }

    pub fn enabled(&self) -> impl Iterator<Item = Stage> + '_ {
        self.stages.iter().filter(|s| s.enabled).map(|s| s.stage)
    }

    /// Enabled stages other than dedup, in order.
    pub fn per_triplet(&self) -> Vec<Stage> {
        self.enabled().filter(|&s| s != Stage::Dedup).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if !seen.insert(s.stage) {
                return Err(format!("stage `{}` listed twice", s.stage));
            }
        }
        if let Some(i) = self.stages.iter().position(|s| s.stage == Stage::Dedup) {
            if i + 1 != self.stages.len() {
                return Err("dedup must be the last stage".into());
            }
        }
        Ok(())
    }
}

/// Per-string-pair minimum mean n-gram score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramThresholds {
    pub gold_answer: f64,
    pub question_answer: f64,
    pub text_answer: f64,
    pub text_question: f64,
}

impl Default for NgramThresholds {
    fn default() -> Self {
        NgramThresholds {
            gold_answer: 0.60,
            question_answer: 0.50,
            text_answer: 0.40,
            text_question: 0.40,
        }
    }
}

impl NgramThresholds {
    pub fn as_array(&self) -> [f64; 4] {
        [self.gold_answer, self.question_answer, self.text_answer, self.text_question]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmdPolarity {
    /// Pass when the distance lies inside the band.
    #[default]
    KeepInside,
    DropInside,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnresolvedPolicy {
    /// Reject the triplet at the stage whose provider failed.
    #[default]
    Reject,
    /// Treat the stage as passed.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupUnit {
    #[default]
    Chars,
    Tokens,
}

/// Every threshold of the cascade plus the stage plan. Loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub lemma_overlap_threshold: f64,
    pub overlap_mode: OverlapMode,
    pub dedup_threshold: f64,
    pub dedup_unit: DedupUnit,
    pub max_interrogatives: usize,
    pub interrogative_words: Vec<String>,
    pub ngram_thresholds: NgramThresholds,
    pub reader_score_min: f64,
    pub wmd_range: [f64; 2],
    pub wmd_polarity: WmdPolarity,
    pub unresolved_policy: UnresolvedPolicy,
    /// Use lowercased surfaces when the lemmatizer fails.
    pub lemma_fallback: bool,
    pub plan: StagePlan,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            lemma_overlap_threshold: 0.70,
            overlap_mode: OverlapMode::Jaccard,
            dedup_threshold: 0.70,
            dedup_unit: DedupUnit::Chars,
            max_interrogatives: 1,
            interrogative_words: DEFAULT_WH_WORDS.iter().map(|w| w.to_string()).collect(),
            ngram_thresholds: NgramThresholds::default(),
            reader_score_min: 0.99,
            wmd_range: [1.1, 1.5],
            wmd_polarity: WmdPolarity::KeepInside,
            unresolved_policy: UnresolvedPolicy::Reject,
            lemma_fallback: true,
            plan: StagePlan::default(),
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must be in [0, 1], got {v}"))
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        fraction("lemma_overlap_threshold", self.lemma_overlap_threshold)?;
        fraction("dedup_threshold", self.dedup_threshold)?;
        fraction("reader_score_min", self.reader_score_min)?;
        for (name, v) in ["gold_answer", "question_answer", "text_answer", "text_question"]
            .iter()
            .zip(self.ngram_thresholds.as_array())
        {
            fraction(&format!("ngram_thresholds.{name}"), v)?;
        }
        let [lo, hi] = self.wmd_range;
        if !(lo >= 0.0 && lo < hi) {
            return Err(format!("wmd_range needs 0 <= low < high, got [{lo}, {hi}]"));
        }
        if self.interrogative_words.is_empty() {
            return Err("interrogative_words is empty".into());
        }
        self.plan.validate()
    }

    pub fn lexicon(&self) -> WhLexicon {
        WhLexicon::new(self.interrogative_words.iter().cloned())
    }

    pub fn from_toml(text: &str) -> Result<Self, FilterError> {
        let cfg: FilterConfig = toml::from_str(text).map_err(|e| FilterError::Config(e.to_string()))?;
        cfg.validate().map_err(FilterError::Config)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FilterError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        FilterConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("filter config serializes")
    }
}
