use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Result, TabularError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    /// Category vocabulary, present iff categorical. Order is canonical.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl FeatureSpec {
    pub fn numeric(name: &str, unit: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            unit: unit.to_string(),
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind: FeatureKind::Categorical,
            unit: String::new(),
            categories: categories.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Ordered description of the mixed domain. The feature order fixed here is
/// the canonical column order everywhere downstream (CSV, tokens, heads).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub features: Vec<FeatureSpec>,
}

impl TabularSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = TabularSchema { features };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(TabularError::SchemaInvalid(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            match f.kind {
                FeatureKind::Numeric => {
                    if !f.categories.is_empty() {
                        return Err(TabularError::SchemaInvalid(format!(
                            "numeric feature `{}` must not declare categories",
                            f.name
                        )));
                    }
                }
                FeatureKind::Categorical => {
                    if f.categories.len() < 2 {
                        return Err(TabularError::SchemaInvalid(format!(
                            "categorical feature `{}` needs at least 2 categories",
                            f.name
                        )));
                    }
                    let uniq: BTreeSet<_> = f.categories.iter().collect();
                    if uniq.len() != f.categories.len() {
                        return Err(TabularError::SchemaInvalid(format!(
                            "categorical feature `{}` has duplicate categories",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn numeric_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Numeric)
    }

    pub fn categorical_features(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
    }

    pub fn n_numeric(&self) -> usize {
        self.numeric_features().count()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_features().count()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let schema: TabularSchema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }
}

/// One row of the mixed domain, in original units, keyed by feature name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedRecord {
    pub numeric_values: BTreeMap<String, f64>,
    pub categorical_values: BTreeMap<String, String>,
}

impl MixedRecord {
    pub fn new() -> Self {
        MixedRecord {
            numeric_values: BTreeMap::new(),
            categorical_values: BTreeMap::new(),
        }
    }

    pub fn with_numeric(mut self, name: &str, v: f64) -> Self {
        self.numeric_values.insert(name.to_string(), v);
        self
    }

    pub fn with_categorical(mut self, name: &str, label: &str) -> Self {
        self.categorical_values
            .insert(name.to_string(), label.to_string());
        self
    }

    /// Keys must exactly partition the schema's features by kind, numeric
    /// values must be finite, category labels must be in-vocabulary.
    pub fn validate(&self, schema: &TabularSchema) -> Result<()> {
        let mut n_num = 0;
        let mut n_cat = 0;
        for f in &schema.features {
            match f.kind {
                FeatureKind::Numeric => {
                    n_num += 1;
                    match self.numeric_values.get(&f.name) {
                        None => {
                            return Err(TabularError::SchemaMismatch {
                                feature: f.name.clone(),
                                reason: "missing numeric value".into(),
                            })
                        }
                        Some(v) if !v.is_finite() => {
                            return Err(TabularError::NonFinite {
                                feature: f.name.clone(),
                            })
                        }
                        Some(_) => {}
                    }
                }
                FeatureKind::Categorical => {
                    n_cat += 1;
                    match self.categorical_values.get(&f.name) {
                        None => {
                            return Err(TabularError::SchemaMismatch {
                                feature: f.name.clone(),
                                reason: "missing categorical value".into(),
                            })
                        }
                        Some(label) if !f.categories.contains(label) => {
                            return Err(TabularError::UnknownCategory {
                                feature: f.name.clone(),
                                label: label.clone(),
                            })
                        }
                        Some(_) => {}
                    }
                }
            }
        }
        if self.numeric_values.len() != n_num {
            let extra = self
                .numeric_values
                .keys()
                .find(|k| !schema.features.iter().any(|f| &f.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(TabularError::SchemaMismatch {
                feature: extra,
                reason: "extra numeric value not in schema".into(),
            });
        }
        if self.categorical_values.len() != n_cat {
            let extra = self
                .categorical_values
                .keys()
                .find(|k| !schema.features.iter().any(|f| &f.name == *k))
                .cloned()
                .unwrap_or_default();
            return Err(TabularError::SchemaMismatch {
                feature: extra,
                reason: "extra categorical value not in schema".into(),
            });
        }
        Ok(())
    }

    pub fn numeric(&self, name: &str) -> f64 {
        self.numeric_values[name]
    }

    pub fn categorical(&self, name: &str) -> &str {
        &self.categorical_values[name]
    }
}

impl Default for MixedRecord {
    fn default() -> Self {
        Self::new()
    }
}
