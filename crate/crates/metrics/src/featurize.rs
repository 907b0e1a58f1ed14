use jointsynth_tabular::{MixedRecord, TabularSchema};

use crate::{MetricsError, Result};

/// A schema plus conforming records — the tabular evaluation input.
#[derive(Clone, Debug)]
pub struct MixedTable {
    pub schema: TabularSchema,
    pub records: Vec<MixedRecord>,
}

impl MixedTable {
    pub fn new(schema: TabularSchema, records: Vec<MixedRecord>) -> Result<Self> {
        for r in &records {
            r.validate(&schema)?;
        }
        Ok(MixedTable { schema, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn numeric_column(&self, name: &str) -> Vec<f64> {
        self.records.iter().map(|r| r.numeric(name)).collect()
    }

    pub fn categorical_column(&self, name: &str) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.categorical(name).to_string())
            .collect()
    }

    pub fn check_same_schema(&self, other: &MixedTable) -> Result<()> {
        if self.schema != other.schema {
            return Err(MetricsError::SchemaMismatch(
                "feature lists differ".to_string(),
            ));
        }
        Ok(())
    }
}

/// Standardization statistics fitted on the real table (numerics only;
/// categorical features become one-hot columns).
#[derive(Clone, Debug)]
pub struct FeaturizeStats {
    pub numeric_mean_std: Vec<(f64, f64)>,
}

impl FeaturizeStats {
    pub fn fit(real: &MixedTable) -> Self {
        let n = real.len().max(1) as f64;
        let numeric_mean_std = real
            .schema
            .numeric_features()
            .map(|f| {
                let col = real.numeric_column(&f.name);
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt().max(1e-8))
            })
            .collect();
        FeaturizeStats { numeric_mean_std }
    }
}

/// Rows to real vectors: standardized numerics followed by one-hot
/// categoricals, in schema order within each kind.
pub fn featurize(table: &MixedTable, stats: &FeaturizeStats) -> Vec<Vec<f64>> {
    let schema = &table.schema;
    let total_dim: usize = schema.n_numeric()
        + schema
            .categorical_features()
            .map(|f| f.categories.len())
            .sum::<usize>();
    table
        .records
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(total_dim);
            for (f, &(mean, std)) in schema.numeric_features().zip(&stats.numeric_mean_std) {
                row.push((r.numeric(&f.name) - mean) / std);
            }
            for f in schema.categorical_features() {
                let label = r.categorical(&f.name);
                for c in &f.categories {
                    row.push(if c == label { 1.0 } else { 0.0 });
                }
            }
            row
        })
        .collect()
}
