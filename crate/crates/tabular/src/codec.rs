use serde::{Deserialize, Serialize};

use jointsynth_nn::{Rng, Tensor};

use crate::schema::{FeatureKind, MixedRecord, TabularSchema};
use crate::{Result, TabularError};

/// Floor applied to fitted standard deviations so zero-variance features
/// stay invertible.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature standardization statistics and category index maps, stored in
/// schema order. Immutable after `fit_normalizer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// (mean, std) per numeric feature, schema order. std >= STD_FLOOR.
    pub numeric_stats: Vec<(f64, f64)>,
    /// label -> contiguous index per categorical feature, schema order,
    /// following the schema's declared category order.
    pub category_indices: Vec<Vec<String>>,
}

impl Normalizer {
    pub fn index_of(&self, cat_feature: usize, label: &str) -> Option<usize> {
        self.category_indices[cat_feature]
            .iter()
            .position(|l| l == label)
    }
}

/// Standardized numeric tokens plus categorical indices for one record.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub numeric_tokens: Vec<f64>,
    pub categorical_tokens: Vec<usize>,
}

/// Learnable per-feature embedding tables (width `d_tok` each).
#[derive(Clone, Debug)]
pub struct EmbeddingParams {
    pub d_tok: usize,
    /// Feature kinds in schema order; fixes the output row interleaving.
    pub kinds: Vec<FeatureKind>,
    /// (weight, bias) per numeric feature, each of length d_tok.
    pub numeric: Vec<(Vec<f32>, Vec<f32>)>,
    /// K x d_tok lookup per categorical feature.
    pub categorical: Vec<Vec<f32>>,
}

impl EmbeddingParams {
    pub fn init(schema: &TabularSchema, d_tok: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / d_tok as f64).sqrt();
        let numeric = schema
            .numeric_features()
            .map(|_| {
                let w: Vec<f32> = (0..d_tok).map(|_| (rng.normal() * std) as f32).collect();
                let b: Vec<f32> = (0..d_tok).map(|_| (rng.normal() * std) as f32).collect();
                (w, b)
            })
            .collect();
        let categorical = schema
            .categorical_features()
            .map(|f| {
                (0..f.categories.len() * d_tok)
                    .map(|_| (rng.normal() * std) as f32)
                    .collect()
            })
            .collect();
        EmbeddingParams {
            d_tok,
            kinds: schema.features.iter().map(|f| f.kind).collect(),
            numeric,
            categorical,
        }
    }

    /// View the tables as named tensors, for registration in a parameter store.
    pub fn to_tensors(&self, schema: &TabularSchema) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        let n_num = self.numeric.len();
        let mut w_flat = Vec::with_capacity(n_num * self.d_tok);
        let mut b_flat = Vec::with_capacity(n_num * self.d_tok);
        for (w, b) in &self.numeric {
            w_flat.extend_from_slice(w);
            b_flat.extend_from_slice(b);
        }
        out.push((
            "tab.num_embed.w".to_string(),
            Tensor::from_vec(vec![n_num, self.d_tok], w_flat),
        ));
        out.push((
            "tab.num_embed.b".to_string(),
            Tensor::from_vec(vec![n_num, self.d_tok], b_flat),
        ));
        for (j, (f, table)) in schema
            .categorical_features()
            .zip(&self.categorical)
            .enumerate()
        {
            out.push((
                format!("tab.cat_embed.{j}"),
                Tensor::from_vec(vec![f.categories.len(), self.d_tok], table.clone()),
            ));
        }
        out
    }
}

/// Fits standardization statistics (population std, floored) and categorical
/// index maps over a record list.
pub fn fit_normalizer(records: &[MixedRecord], schema: &TabularSchema) -> Result<Normalizer> {
    if records.is_empty() {
        return Err(TabularError::EmptyRecords);
    }
    for r in records {
        r.validate(schema)?;
    }
    let n = records.len() as f64;
    let numeric_stats = schema
        .numeric_features()
        .map(|f| {
            let mean = records.iter().map(|r| r.numeric(&f.name)).sum::<f64>() / n;
            let var = records
                .iter()
                .map(|r| {
                    let d = r.numeric(&f.name) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            (mean, var.sqrt().max(STD_FLOOR))
        })
        .collect();
    let category_indices = schema
        .categorical_features()
        .map(|f| f.categories.clone())
        .collect();
    Ok(Normalizer {
        numeric_stats,
        category_indices,
    })
}

/// Record -> standardized tokens + categorical indices (schema order).
pub fn encode_record(
    record: &MixedRecord,
    schema: &TabularSchema,
    norm: &Normalizer,
) -> Result<TokenSequence> {
    record.validate(schema)?;
    let numeric_tokens = schema
        .numeric_features()
        .zip(&norm.numeric_stats)
        .map(|(f, &(mean, std))| (record.numeric(&f.name) - mean) / std)
        .collect();
    let mut categorical_tokens = Vec::with_capacity(schema.n_categorical());
    for (j, f) in schema.categorical_features().enumerate() {
        let label = record.categorical(&f.name);
        let idx = norm
            .index_of(j, label)
            .ok_or_else(|| TabularError::UnknownCategory {
                feature: f.name.clone(),
                label: label.to_string(),
            })?;
        categorical_tokens.push(idx);
    }
    Ok(TokenSequence {
        numeric_tokens,
        categorical_tokens,
    })
}

/// Tokens -> embedding matrix, one row per feature in schema order (numeric
/// and categorical rows interleaved exactly as the schema declares them).
/// Numeric row: token * w + b. Categorical row: lookup row.
pub fn embed_tokens(tokens: &TokenSequence, params: &EmbeddingParams) -> Result<Vec<Vec<f32>>> {
    if tokens.numeric_tokens.len() != params.numeric.len() {
        return Err(TabularError::Shape(format!(
            "numeric token count {} vs embedding tables {}",
            tokens.numeric_tokens.len(),
            params.numeric.len()
        )));
    }
    if tokens.categorical_tokens.len() != params.categorical.len() {
        return Err(TabularError::Shape(format!(
            "categorical token count {} vs embedding tables {}",
            tokens.categorical_tokens.len(),
            params.categorical.len()
        )));
    }
    let d = params.d_tok;
    let mut rows = Vec::with_capacity(params.kinds.len());
    let mut num_i = 0usize;
    let mut cat_j = 0usize;
    for kind in &params.kinds {
        match kind {
            FeatureKind::Numeric => {
                let t = tokens.numeric_tokens[num_i] as f32;
                let (w, b) = &params.numeric[num_i];
                rows.push(w.iter().zip(b).map(|(wv, bv)| t * wv + bv).collect());
                num_i += 1;
            }
            FeatureKind::Categorical => {
                let idx = tokens.categorical_tokens[cat_j];
                let table = &params.categorical[cat_j];
                let k = table.len() / d;
                if idx >= k {
                    return Err(TabularError::Shape(format!(
                        "categorical index {idx} out of range {k}"
                    )));
                }
                rows.push(table[idx * d..(idx + 1) * d].to_vec());
                cat_j += 1;
            }
        }
    }
    Ok(rows)
}

/// Decoder head outputs -> record in original units. Numeric predictions are
/// denormalized (pred*std + mean, unclamped); categorical labels are the
/// argmax of the logits with lowest-index tie-break.
pub fn decode_outputs(
    numeric_preds: &[f64],
    categorical_logits: &[Vec<f64>],
    schema: &TabularSchema,
    norm: &Normalizer,
) -> Result<MixedRecord> {
    if numeric_preds.len() != schema.n_numeric() {
        return Err(TabularError::Shape(format!(
            "numeric prediction count {} vs schema {}",
            numeric_preds.len(),
            schema.n_numeric()
        )));
    }
    if categorical_logits.len() != schema.n_categorical() {
        return Err(TabularError::Shape(format!(
            "categorical logit groups {} vs schema {}",
            categorical_logits.len(),
            schema.n_categorical()
        )));
    }
    let mut record = MixedRecord::new();
    for ((f, &pred), &(mean, std)) in schema
        .numeric_features()
        .zip(numeric_preds)
        .zip(&norm.numeric_stats)
    {
        if !pred.is_finite() {
            return Err(TabularError::NonFinite {
                feature: f.name.clone(),
            });
        }
        record
            .numeric_values
            .insert(f.name.clone(), pred * std + mean);
    }
    for (f, logits) in schema.categorical_features().zip(categorical_logits) {
        if logits.len() != f.categories.len() {
            return Err(TabularError::Shape(format!(
                "logit length {} vs vocabulary {} for `{}`",
                logits.len(),
                f.categories.len(),
                f.name
            )));
        }
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        record
            .categorical_values
            .insert(f.name.clone(), f.categories[best].clone());
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureSpec;
    use proptest::prelude::*;

    fn demo_schema() -> TabularSchema {
        TabularSchema::new(vec![
            FeatureSpec::numeric("height", "cm"),
            FeatureSpec::categorical("ethnicity", &["European", "Other"]),
            FeatureSpec::categorical("sex", &["male", "female"]),
        ])
        .unwrap()
    }

    fn rec(height: f64, eth: &str, sex: &str) -> MixedRecord {
        MixedRecord::new()
            .with_numeric("height", height)
            .with_categorical("ethnicity", eth)
            .with_categorical("sex", sex)
    }

    #[test]
    fn fit_normalizer_direct_arithmetic() {
        // heights {160, 170, 180}: mean 170, population std sqrt(200/3)
        let schema = demo_schema();
        let records = vec![
            rec(160.0, "European", "male"),
            rec(170.0, "Other", "female"),
            rec(180.0, "European", "male"),
        ];
        let norm = fit_normalizer(&records, &schema).unwrap();
        let (mean, std) = norm.numeric_stats[0];
        assert!((mean - 170.0).abs() < 1e-12);
        let expected_std = (200.0f64 / 3.0).sqrt();
        assert!((std - expected_std).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_floors_std() {
        let schema = demo_schema();
        let records = vec![rec(170.0, "European", "male"); 5];
        let norm = fit_normalizer(&records, &schema).unwrap();
        assert_eq!(norm.numeric_stats[0].1, STD_FLOOR);
    }

    #[test]
    fn category_index_map_follows_declared_order() {
        let schema = demo_schema();
        let norm = fit_normalizer(&[rec(170.0, "Other", "female")], &schema).unwrap();
        assert_eq!(norm.index_of(0, "European"), Some(0));
        assert_eq!(norm.index_of(0, "Other"), Some(1));
        assert_eq!(norm.index_of(1, "male"), Some(0));
        assert_eq!(norm.index_of(1, "female"), Some(1));
    }

    #[test]
    fn fit_rejects_empty_and_mismatched() {
        let schema = demo_schema();
        assert!(matches!(
            fit_normalizer(&[], &schema),
            Err(TabularError::EmptyRecords)
        ));
        let bad = MixedRecord::new().with_numeric("height", 170.0);
        let err = fit_normalizer(&[bad], &schema).unwrap_err();
        assert!(err.to_string().contains("ethnicity") || err.to_string().contains("sex"));
    }

    #[test]
    fn encode_examples() {
        let schema = demo_schema();
        let norm = Normalizer {
            numeric_stats: vec![(170.0, 5.0)],
            category_indices: vec![
                vec!["European".into(), "Other".into()],
                vec!["male".into(), "female".into()],
            ],
        };
        // value = mean -> token 0
        let t = encode_record(&rec(170.0, "European", "male"), &schema, &norm).unwrap();
        assert_eq!(t.numeric_tokens[0], 0.0);
        // height 180 with (mean 170, std 5) -> 2.0
        let t = encode_record(&rec(180.0, "European", "female"), &schema, &norm).unwrap();
        assert_eq!(t.numeric_tokens[0], 2.0);
        // sex "female" -> 1
        assert_eq!(t.categorical_tokens[1], 1);
    }

    #[test]
    fn embed_token_rows() {
        let params = EmbeddingParams {
            d_tok: 3,
            kinds: vec![FeatureKind::Numeric, FeatureKind::Categorical],
            numeric: vec![(vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5])],
            categorical: vec![vec![9.0, 9.0, 9.0, 7.0, 7.0, 7.0]],
        };
        // token 0 -> bias exactly
        let rows = embed_tokens(
            &TokenSequence {
                numeric_tokens: vec![0.0],
                categorical_tokens: vec![0],
            },
            &params,
        )
        .unwrap();
        assert_eq!(rows[0], vec![0.5, 0.5, 0.5]);
        assert_eq!(rows[1], vec![9.0, 9.0, 9.0]);
        // token 1 -> w + b; categorical index 1 -> table row 1
        let rows = embed_tokens(
            &TokenSequence {
                numeric_tokens: vec![1.0],
                categorical_tokens: vec![1],
            },
            &params,
        )
        .unwrap();
        assert_eq!(rows[0], vec![1.5, 2.5, 3.5]);
        assert_eq!(rows[1], vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn embed_rows_interleave_in_schema_order() {
        // schema order cat, num: the categorical row must come first
        let params = EmbeddingParams {
            d_tok: 2,
            kinds: vec![FeatureKind::Categorical, FeatureKind::Numeric],
            numeric: vec![(vec![1.0, 1.0], vec![0.0, 0.0])],
            categorical: vec![vec![5.0, 5.0, 6.0, 6.0]],
        };
        let rows = embed_tokens(
            &TokenSequence {
                numeric_tokens: vec![3.0],
                categorical_tokens: vec![1],
            },
            &params,
        )
        .unwrap();
        assert_eq!(rows[0], vec![6.0, 6.0]);
        assert_eq!(rows[1], vec![3.0, 3.0]);
    }

    #[test]
    fn decode_examples() {
        let schema = demo_schema();
        let norm = Normalizer {
            numeric_stats: vec![(170.0, 5.0)],
            category_indices: vec![
                vec!["European".into(), "Other".into()],
                vec!["male".into(), "female".into()],
            ],
        };
        // pred 0 -> exactly the mean
        let r = decode_outputs(&[0.0], &[vec![0.0, -1.0], vec![1.0, 0.0]], &schema, &norm).unwrap();
        assert_eq!(r.numeric("height"), 170.0);
        // tie-break picks the first category
        let r = decode_outputs(&[0.0], &[vec![2.0, 2.0], vec![2.0, 2.0]], &schema, &norm).unwrap();
        assert_eq!(r.categorical("ethnicity"), "European");
        assert_eq!(r.categorical("sex"), "male");
        // pred 2.0 -> 180 (inverse of the encode example)
        let r = decode_outputs(&[2.0], &[vec![0.0, 1.0], vec![0.0, 1.0]], &schema, &norm).unwrap();
        assert_eq!(r.numeric("height"), 180.0);
        // non-finite -> error naming the feature
        let err = decode_outputs(&[f64::NAN], &[vec![0.0, 1.0], vec![0.0, 1.0]], &schema, &norm)
            .unwrap_err();
        assert!(err.to_string().contains("height"));
    }

    proptest! {
        /// Round trip: decode(encode(r)) with one-hot logits of the encoded
        /// index reproduces r exactly for categoricals, within 1e-9 relative
        /// for numerics.
        #[test]
        fn round_trip(height in 100.0f64..220.0, eth in 0usize..2, sex in 0usize..2) {
            let schema = demo_schema();
            let records = vec![
                rec(160.0, "European", "male"),
                rec(175.0, "Other", "female"),
                rec(190.0, "European", "female"),
            ];
            let norm = fit_normalizer(&records, &schema).unwrap();
            let eth_labels = ["European", "Other"];
            let sex_labels = ["male", "female"];
            let original = rec(height, eth_labels[eth], sex_labels[sex]);
            let tokens = encode_record(&original, &schema, &norm).unwrap();
            let logits: Vec<Vec<f64>> = tokens
                .categorical_tokens
                .iter()
                .zip(schema.categorical_features())
                .map(|(&idx, f)| {
                    (0..f.categories.len())
                        .map(|i| if i == idx { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            let back = decode_outputs(&tokens.numeric_tokens, &logits, &schema, &norm).unwrap();
            prop_assert_eq!(back.categorical("ethnicity"), original.categorical("ethnicity"));
            prop_assert_eq!(back.categorical("sex"), original.categorical("sex"));
            let rel = (back.numeric("height") - height).abs() / height.abs().max(1.0);
            prop_assert!(rel < 1e-9);
        }

        /// encode_record is affine per numeric feature under the fitted stats.
        #[test]
        fn encode_affine(a in -3.0f64..3.0, x in 100.0f64..220.0) {
            let schema = demo_schema();
            let records = vec![
                rec(150.0, "European", "male"),
                rec(170.0, "Other", "male"),
                rec(200.0, "European", "female"),
            ];
            let norm = fit_normalizer(&records, &schema).unwrap();
            let (mean, std) = norm.numeric_stats[0];
            let t = encode_record(&rec(x, "Other", "male"), &schema, &norm).unwrap();
            let expected = (x - mean) / std;
            prop_assert!((t.numeric_tokens[0] - expected).abs() < 1e-12);
            let t2 = encode_record(&rec(a.mul_add(10.0, x), "Other", "male"), &schema, &norm).unwrap();
            let expected2 = (a.mul_add(10.0, x) - mean) / std;
            prop_assert!((t2.numeric_tokens[0] - expected2).abs() < 1e-12);
        }

        /// embed_tokens row count always equals the total feature count.
        #[test]
        fn embed_row_count(t in -5.0f64..5.0, c0 in 0usize..2, c1 in 0usize..2) {
            let schema = demo_schema();
            let mut rng = jointsynth_nn::Rng::from_seed(1);
            let params = EmbeddingParams::init(&schema, 16, &mut rng);
            let rows = embed_tokens(
                &TokenSequence {
                    numeric_tokens: vec![t],
                    categorical_tokens: vec![c0, c1],
                },
                &params,
            )
            .unwrap();
            prop_assert_eq!(rows.len(), schema.n_features());
            for row in rows {
                prop_assert_eq!(row.len(), 16);
            }
        }
    }
}
