//! Studies over assessment methods: template variance, spurious-object
//! sensitivity, agreement with human judgements, and threshold calibration.

mod agreement;
mod calibrate;
mod spurious;
mod variance;

pub use agreement::{
    kendall_tau, kendall_tau_b, load_gold, recall_unknown, GoldLabel, PValueMethod, RecallResult, TauResult,
};
pub use calibrate::{calibrate_threshold, Calibration};
pub use spurious::{
    spurious_metrics, spurious_synthesize, AliasIndex, SpuriousFact, SpuriousMetrics, SpuriousSynthesis,
};
pub use variance::{population_variance, variance_study, VarianceStudy};

use serde::{Deserialize, Serialize};

use crate::baselines::{assess_baseline, BaselineConfig};
use crate::engine::KarrConfig;
use crate::error::Result;
use crate::report::{Method, SuiteReport};
use crate::runner::{assess_suite, RunOptions};
use crate::scorer::Scorer;
use crate::suite::{Fact, KnowledgeSuite};

/// Settings for whichever method a study runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub karr: KarrConfig,
    pub baseline: BaselineConfig,
}

pub fn evaluate_method(
    method: Method,
    facts: &[Fact],
    suite: &KnowledgeSuite,
    scorer: &dyn Scorer,
    config: &MethodConfig,
    options: &RunOptions,
) -> Result<SuiteReport> {
    match method {
        Method::Karr => assess_suite(facts, suite, scorer, &config.karr, options),
        baseline => assess_baseline(baseline, facts, suite, scorer, &config.baseline, options),
    }
}
