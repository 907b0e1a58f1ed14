use serde::{Deserialize, Serialize};

use jointsynth_tabular::FeatureKind;

use crate::featurize::MixedTable;
use crate::{MetricsError, Result};

/// Column pair association. Numeric-numeric pairs use Pearson's rho in
/// [-1, 1]; mixed pairs the correlation ratio eta in [0, 1]; categorical
/// pairs Cramér's V in [0, 1] (no bias correction). Constant columns
/// degenerate to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationKind {
    Pearson,
    CorrelationRatio,
    CramersV,
}

pub enum Column<'a> {
    Numeric(&'a [f64]),
    /// (category index per row, vocabulary size)
    Categorical(&'a [usize], usize),
}

pub fn association(u: &Column, v: &Column) -> Result<(f64, AssociationKind)> {
    let (lu, lv) = (col_len(u), col_len(v));
    if lu != lv {
        return Err(MetricsError::Dimension(format!(
            "column lengths {lu} vs {lv}"
        )));
    }
    if lu < 2 {
        return Err(MetricsError::TooFewRows(
            "association needs >= 2 samples".into(),
        ));
    }
    match (u, v) {
        (Column::Numeric(x), Column::Numeric(y)) => Ok((pearson(x, y), AssociationKind::Pearson)),
        (Column::Numeric(y), Column::Categorical(g, k)) // eta is asymmetric in roles,
        | (Column::Categorical(g, k), Column::Numeric(y)) => {
            Ok((correlation_ratio(g, *k, y), AssociationKind::CorrelationRatio))
        }
        (Column::Categorical(a, ka), Column::Categorical(b, kb)) => {
            Ok((cramers_v(a, *ka, b, *kb), AssociationKind::CramersV))
        }
    }
}

fn col_len(c: &Column) -> usize {
    match c {
        Column::Numeric(x) => x.len(),
        Column::Categorical(x, _) => x.len(),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    (cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0)
}

/// eta = sqrt( sum_c n_c (ybar_c - ybar)^2 / sum_i (y_i - ybar)^2 )
fn correlation_ratio(groups: &[usize], k: usize, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let total: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut counts = vec![0.0f64; k];
    let mut sums = vec![0.0f64; k];
    for (&g, &v) in groups.iter().zip(y) {
        counts[g] += 1.0;
        sums[g] += v;
    }
    let mut between = 0.0;
    for c in 0..k {
        if counts[c] > 0.0 {
            let gc = sums[c] / counts[c];
            between += counts[c] * (gc - ybar) * (gc - ybar);
        }
    }
    (between / total).clamp(0.0, 1.0).sqrt()
}

/// Cramér's V = sqrt(chi^2 / (n * min(r-1, c-1))) over the observed
/// contingency table; all-zero vocabulary rows/columns are dropped before
/// computing the degrees of freedom.
fn cramers_v(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut table = vec![0.0f64; ka * kb];
    let mut row_sum = vec![0.0f64; ka];
    let mut col_sum = vec![0.0f64; kb];
    for (&i, &j) in a.iter().zip(b) {
        table[i * kb + j] += 1.0;
        row_sum[i] += 1.0;
        col_sum[j] += 1.0;
    }
    let r_obs = row_sum.iter().filter(|&&s| s > 0.0).count();
    let c_obs = col_sum.iter().filter(|&&s| s > 0.0).count();
    let dof = r_obs.min(c_obs).saturating_sub(1);
    if dof == 0 {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for i in 0..ka {
        if row_sum[i] == 0.0 {
            continue;
        }
        for j in 0..kb {
            if col_sum[j] == 0.0 {
                continue;
            }
            let expected = row_sum[i] * col_sum[j] / n;
            let d = table[i * kb + j] - expected;
            chi2 += d * d / expected;
        }
    }
    (chi2 / (n * dof as f64)).sqrt().clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationBreakdown {
    pub feature_a: String,
    pub feature_b: String,
    pub kind: AssociationKind,
    pub real: f64,
    pub synth: f64,
    /// |real - synth|, halved for Pearson pairs to land on a [0, 1] scale.
    pub distance: f64,
}

/// Mean over unordered feature pairs of the association difference between
/// the two tables, each contribution normalized to [0, 1].
pub fn correlation_distance(
    real: &MixedTable,
    synth: &MixedTable,
) -> Result<(f64, Vec<CorrelationBreakdown>)> {
    real.check_same_schema(synth)?;
    let schema = &real.schema;
    if schema.n_features() < 2 {
        return Err(MetricsError::Input(
            "correlation_distance needs >= 2 features".into(),
        ));
    }
    if real.len() < 2 || synth.len() < 2 {
        return Err(MetricsError::TooFewRows(
            "correlation_distance needs >= 2 rows per table".into(),
        ));
    }

    let col = |table: &MixedTable, f: &jointsynth_tabular::FeatureSpec| -> ColumnData {
        match f.kind {
            FeatureKind::Numeric => ColumnData::Numeric(table.numeric_column(&f.name)),
            FeatureKind::Categorical => {
                let idx = table
                    .records
                    .iter()
                    .map(|r| {
                        f.categories
                            .iter()
                            .position(|c| c == r.categorical(&f.name))
                            .expect("validated record")
                    })
                    .collect();
                ColumnData::Categorical(idx, f.categories.len())
            }
        }
    };
    let real_cols: Vec<ColumnData> = schema.features.iter().map(|f| col(real, f)).collect();
    let synth_cols: Vec<ColumnData> = schema.features.iter().map(|f| col(synth, f)).collect();

    let mut breakdown = Vec::new();
    let nf = schema.n_features();
    for i in 0..nf {
        for j in (i + 1)..nf {
            let (a_real, kind) = association(&real_cols[i].as_column(), &real_cols[j].as_column())?;
            let (a_synth, _) = association(&synth_cols[i].as_column(), &synth_cols[j].as_column())?;
            let raw = (a_real - a_synth).abs();
            let distance = match kind {
                AssociationKind::Pearson => raw / 2.0,
                _ => raw,
            };
            breakdown.push(CorrelationBreakdown {
                feature_a: schema.features[i].name.clone(),
                feature_b: schema.features[j].name.clone(),
                kind,
                real: a_real,
                synth: a_synth,
                distance,
            });
        }
    }
    let mean = breakdown.iter().map(|b| b.distance).sum::<f64>() / breakdown.len() as f64;
    Ok((mean, breakdown))
}

enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>, usize),
}

impl ColumnData {
    fn as_column(&self) -> Column<'_> {
        match self {
            ColumnData::Numeric(x) => Column::Numeric(x),
            ColumnData::Categorical(x, k) => Column::Categorical(x, *k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointsynth_tabular::{FeatureSpec, MixedRecord, TabularSchema};

    #[test]
    fn pearson_identity() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let (rho, kind) = association(&Column::Numeric(&x), &Column::Numeric(&x)).unwrap();
        assert_eq!(kind, AssociationKind::Pearson);
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_categorical_columns_give_v_of_one() {
        let a = vec![0usize, 0, 1, 1, 0, 1];
        let (v, kind) =
            association(&Column::Categorical(&a, 2), &Column::Categorical(&a, 2)).unwrap();
        assert_eq!(kind, AssociationKind::CramersV);
        assert!((v - 1.0).abs() < 1e-12, "V = {v}");
    }

    #[test]
    fn eta_perfect_grouping() {
        // groups {A: 1,1; B: 3,3} -> within-group variance 0 -> eta = 1
        let g = vec![0usize, 0, 1, 1];
        let y = vec![1.0, 1.0, 3.0, 3.0];
        let (eta, kind) =
            association(&Column::Categorical(&g, 2), &Column::Numeric(&y)).unwrap();
        assert_eq!(kind, AssociationKind::CorrelationRatio);
        assert!((eta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_columns_degenerate_to_zero() {
        let c = vec![2.0, 2.0, 2.0];
        let x = vec![1.0, 2.0, 3.0];
        let (rho, _) = association(&Column::Numeric(&c), &Column::Numeric(&x)).unwrap();
        assert_eq!(rho, 0.0);
        let g = vec![0usize, 0, 0];
        let (eta, _) = association(&Column::Categorical(&g, 2), &Column::Numeric(&c)).unwrap();
        assert_eq!(eta, 0.0);
        let (v, _) =
            association(&Column::Categorical(&g, 2), &Column::Categorical(&g, 2)).unwrap();
        assert_eq!(v, 0.0);
    }

    fn numeric_pair_table(rows: &[(f64, f64)]) -> MixedTable {
        let schema = TabularSchema::new(vec![
            FeatureSpec::numeric("x", ""),
            FeatureSpec::numeric("y", ""),
        ])
        .unwrap();
        MixedTable::new(
            schema,
            rows.iter()
                .map(|&(x, y)| MixedRecord::new().with_numeric("x", x).with_numeric("y", y))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn self_correlation_distance_is_zero() {
        let t = numeric_pair_table(&[(1.0, 2.0), (2.0, 1.0), (3.0, 4.0), (4.0, 3.0)]);
        let (d, _) = correlation_distance(&t, &t).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn perfect_vs_uncorrelated_pair_gives_half() {
        // rho_real = 1, rho_synth = 0 -> |1 - 0| / 2 = 0.5
        let real = numeric_pair_table(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)]);
        let synth = numeric_pair_table(&[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]);
        let (d, breakdown) = correlation_distance(&real, &synth).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "d = {d}");
        assert_eq!(breakdown.len(), 1);
    }
}
