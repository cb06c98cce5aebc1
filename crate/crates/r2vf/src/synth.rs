//! Seeded synthetic data: city / age / profession columns with mild mutual
//! correlation and a target built from cluster-constant effects, so the true
//! level groups are known exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::table::{ColumnData, Table};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rows: usize,
    pub n_professions: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_rows: 10_000,
            n_professions: 100,
            noise_sd: 10.0,
            seed: 0,
        }
    }
}

pub const CITIES: [&str; 26] = [
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r",
    "s", "t", "u", "v", "w", "x", "y", "z",
];

/// True city effect on the target. Seven distinct values across 26 cities.
pub fn city_effect(city: &str) -> f64 {
    match city {
        "b" | "c" | "d" => 15.0,
        "e" | "f" | "g" | "h" | "i" | "j" | "k" | "l" => 17.0,
        "m" | "n" | "o" | "p" => -12.0,
        "q" | "r" | "s" | "t" | "u" | "v" => -14.0,
        "w" | "x" => 10.0,
        "y" | "z" => -10.0,
        _ => 0.0,
    }
}

/// True profession effect, keyed on the last digit of the label.
pub fn profession_effect(profession: &str) -> f64 {
    match profession.chars().last() {
        Some('1') => -19.0,
        Some('2') => -17.0,
        Some('3') => -9.0,
        Some('4') => -8.0,
        Some('5') => 1.0,
        Some('6') => 2.0,
        Some('7') => 8.0,
        Some('8') => 9.0,
        Some('9') => 19.0,
        _ => 0.0,
    }
}

/// Age effect: a tent peaking at 45.
pub fn age_effect(age: f64) -> f64 {
    -2.0 * (age - 45.0).abs()
}

/// Noise-free target for one row.
pub fn true_target(city: &str, age: f64, profession: &str) -> f64 {
    city_effect(city) + age_effect(age) + profession_effect(profession)
}

/// Generate the synthetic table: columns `city`, `age`, `profession`,
/// `target`. Identical config always yields the identical table.
pub fn generate(config: &SynthConfig) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_rows;
    let n_prof = config.n_professions.max(1);

    // City frequencies on a linear scale: city k gets weight k+1.
    let city_weights: Vec<f64> = (0..26).map(|k| (k + 1) as f64).collect();
    let city_total: f64 = city_weights.iter().sum();

    // Mean age per city, drawn once from [34, 46].
    let city_age_mean: Vec<f64> = (0..26).map(|_| rng.gen_range(34.0..=46.0)).collect();
    let age_noise = Normal::new(0.0, 13.0).unwrap();
    let target_noise = if config.noise_sd > 0.0 {
        Some(Normal::new(0.0, config.noise_sd).unwrap())
    } else {
        None
    };
    // Skewed profession prevalence: a geometric-shaped draw whose scale
    // grows with the label space, rotated by city and age so the three
    // columns stay mildly correlated.
    let prof_scale = (n_prof as f64 / 12.0).max(4.0);

    let mut cities = Vec::with_capacity(n);
    let mut ages = Vec::with_capacity(n);
    let mut professions = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);

    for _ in 0..n {
        let mut u = rng.gen_range(0.0..city_total);
        let mut city_idx = 0usize;
        for (k, &w) in city_weights.iter().enumerate() {
            if u < w {
                city_idx = k;
                break;
            }
            u -= w;
        }
        let city = CITIES[city_idx];

        let age = (city_age_mean[city_idx] + age_noise.sample(&mut rng)).clamp(18.0, 90.0);
        let age_decile = (((age - 18.0) / 7.2).floor() as usize).min(9);

        let base: f64 = rng.gen::<f64>();
        let skew_idx = (-base.ln() * prof_scale).floor() as usize;
        // a small shift keeps the correlation with city and age minor
        let shift = (city_idx + age_decile) / 4;
        let prof_idx = (skew_idx + shift).min(n_prof - 1);
        let profession = format!("P{prof_idx}");

        let mut target = true_target(city, age, &profession);
        if let Some(dist) = &target_noise {
            target += dist.sample(&mut rng);
        }

        cities.push(city.to_string());
        ages.push(age);
        professions.push(profession);
        targets.push(target);
    }

    let mut table = Table::new();
    table.push_column("city", ColumnData::Categorical(cities))?;
    table.push_column("age", ColumnData::Numeric(ages))?;
    table.push_column("profession", ColumnData::Categorical(professions))?;
    table.push_column("target", ColumnData::Numeric(targets))?;
    Ok(table)
}
