use serde::{Deserialize, Serialize};

use jointsynth_nn::Rng;
use jointsynth_tabular::{FeatureSpec, MixedRecord, TabularSchema};

/// The NAKO-style feature set, in paper order: age, sex, height, weight,
/// BMI, body fat %, ethnicity.
pub fn nako_schema() -> TabularSchema {
    TabularSchema::new(vec![
        FeatureSpec::numeric("age", "years"),
        FeatureSpec::categorical("sex", &["male", "female"]),
        FeatureSpec::numeric("height_cm", "cm"),
        FeatureSpec::numeric("weight_kg", "kg"),
        FeatureSpec::numeric("bmi", "kg/m2"),
        FeatureSpec::numeric("body_fat_pct", "%"),
        FeatureSpec::categorical("ethnicity", &["European", "Other"]),
    ])
    .expect("built-in schema is valid")
}

/// Distribution parameters for the sampled attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeParams {
    pub p_male: f64,
    pub height_mean_male: f64,
    pub height_mean_female: f64,
    pub height_std: f64,
    pub height_range: (f64, f64),
    pub bmi_mean: f64,
    pub bmi_std: f64,
    pub bmi_range: (f64, f64),
    pub body_fat_noise_std: f64,
    pub body_fat_range: (f64, f64),
    pub age_range: (f64, f64),
    pub p_european: f64,
}

impl Default for AttributeParams {
    fn default() -> Self {
        AttributeParams {
            p_male: 0.5,
            height_mean_male: 178.0,
            height_mean_female: 165.0,
            height_std: 7.0,
            height_range: (145.0, 210.0),
            bmi_mean: 26.0,
            bmi_std: 4.0,
            bmi_range: (16.0, 45.0),
            body_fat_noise_std: 2.0,
            body_fat_range: (5.0, 60.0),
            age_range: (19.0, 74.0),
            p_european: 0.85,
        }
    }
}

/// Draws one subject. Weight is defined as bmi * (height_m)^2, so the
/// weight/height/BMI triple is exactly consistent by construction.
pub fn sample_phantom_attributes(rng: &mut Rng, params: &AttributeParams) -> MixedRecord {
    let male = rng.bernoulli(params.p_male);
    let height_mean = if male {
        params.height_mean_male
    } else {
        params.height_mean_female
    };
    let height = rng.normal_truncated(
        height_mean,
        params.height_std,
        params.height_range.0,
        params.height_range.1,
    );
    let bmi = rng.normal_truncated(
        params.bmi_mean,
        params.bmi_std,
        params.bmi_range.0,
        params.bmi_range.1,
    );
    let weight = bmi * (height / 100.0) * (height / 100.0);
    let body_fat = (0.7 * bmi
        + if male { 0.0 } else { 10.0 }
        + rng.normal_with(0.0, params.body_fat_noise_std))
    .clamp(params.body_fat_range.0, params.body_fat_range.1);
    let age = rng.uniform_in(params.age_range.0, params.age_range.1);
    let european = rng.bernoulli(params.p_european);

    MixedRecord::new()
        .with_numeric("age", age)
        .with_categorical("sex", if male { "male" } else { "female" })
        .with_numeric("height_cm", height)
        .with_numeric("weight_kg", weight)
        .with_numeric("bmi", bmi)
        .with_numeric("body_fat_pct", body_fat)
        .with_categorical("ethnicity", if european { "European" } else { "Other" })
}
