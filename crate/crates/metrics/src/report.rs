use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assoc::CorrelationBreakdown;
use crate::evaluate::EvalConfig;

/// One metric outcome: either a value or the error that prevented it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub error: Option<String>,
}

impl MetricValue {
    pub fn ok(v: f64) -> Self {
        MetricValue {
            value: Some(v),
            error: None,
        }
    }

    pub fn failed(e: impl ToString) -> Self {
        MetricValue {
            value: None,
            error: Some(e.to_string()),
        }
    }

    pub fn unwrap(&self) -> f64 {
        self.value.unwrap_or_else(|| {
            panic!(
                "metric failed: {}",
                self.error.as_deref().unwrap_or("unknown")
            )
        })
    }
}

/// Named scalar results of the full evaluation battery plus the configuration
/// that produced them. Serialized as JSON with a stable key set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fd: MetricValue,
    pub wd_sinkhorn: MetricValue,
    pub detection: MetricValue,
    pub alpha_precision: MetricValue,
    pub beta_recall: MetricValue,
    pub univariate_distance: MetricValue,
    pub correlation_distance: MetricValue,
    pub per_feature_univariate: BTreeMap<String, f64>,
    pub correlation_pairs: Vec<CorrelationBreakdown>,
    pub config: EvalConfig,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Range invariants from the metric definitions; values outside their
    /// declared ranges indicate an implementation bug.
    pub fn ranges_valid(&self) -> bool {
        let in_range = |m: &MetricValue, lo: f64, hi: f64| match m.value {
            Some(v) => (lo..=hi).contains(&v),
            None => true,
        };
        in_range(&self.fd, 0.0, f64::INFINITY)
            && in_range(&self.wd_sinkhorn, 0.0, f64::INFINITY)
            && in_range(&self.detection, 0.5, 1.0)
            && in_range(&self.alpha_precision, 0.0, 1.0)
            && in_range(&self.beta_recall, 0.0, 1.0)
            && in_range(&self.univariate_distance, 0.0, 1.0)
            && in_range(&self.correlation_distance, 0.0, 1.0)
    }
}
