//! Synthetic shipment generator with planted mode-choice structure.
//!
//! Areas sit on a plane; great-circle distance is Euclidean between the area
//! centers times per-record lognormal dispersion (shipments originate at
//! different points within an area, so no distance value identifies an area
//! pair). Each (origin, destination, mode) pair carries a fixed route factor
//! (mode base multiplier times lognormal pair noise), so per-mode routed
//! distances have real OD-level structure that derived-distance features can
//! recover — by aggregating over the pair's name, not its distance — but a
//! plain great-circle column cannot. Mode utilities are linear in
//! standardized log weight, value density, and the mode's routed distance,
//! with two planted heterogeneities: per-category (SCTG) coefficients that
//! flip the weight→mode rule, and per-NAICS slope and distance interactions
//! on top of additive mode shifts. Hard
//! availability rules hold: private truck only within the distance cap, air
//! only between city/metro endpoints, and the residual "other" mode only on
//! a fixed random subset of area pairs.
//!
//! The chosen mode is sampled from the softmax of available utilities, so
//! the true choice probabilities are known exactly; they go to a sidecar
//! (never the feature file), along with the Bayes-optimal label. The mean
//! maximum probability is the Bayes accuracy ceiling that no model can beat
//! except by sampling luck.

use crate::ingest::{write_shipments_csv, IngestConfig};
use crate::model::{AreaType, CategoryMaps, Hazmat, ModeLabel, ShipmentRecord, NUM_MODES};
use crate::rng::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Per-SCTG utility adjustments — the planted category heterogeneity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub sctg: String,
    /// Coefficient on standardized log weight in the for-hire-truck utility.
    pub truck_weight_slope: f64,
    /// Coefficient on standardized log weight in the parcel utility.
    pub parcel_weight_slope: f64,
    /// Multiplies every mode's distance coefficient.
    pub distance_scale: f64,
    /// Probability a record in this category carries flammable liquids.
    pub hazmat_rate: f64,
}

/// Per-industry utility adjustments — the planted industry heterogeneity.
///
/// The slope deltas and distance scale are interactions, not level shifts:
/// they change how weight and distance map to mode within the industry,
/// which is the structure an industry-local model can capture and a shared
/// model of bounded capacity cannot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaicsProfile {
    pub naics: String,
    /// Additive per-mode utility shift.
    pub shift: [f64; NUM_MODES],
    /// Added to each mode's standardized-log-weight coefficient.
    #[serde(default = "zero_slopes")]
    pub weight_slope_delta: [f64; NUM_MODES],
    /// Multiplies every mode's distance coefficient, on top of the
    /// category's scale.
    #[serde(default = "unit_scale")]
    pub distance_scale: f64,
}

fn zero_slopes() -> [f64; NUM_MODES] {
    [0.0; NUM_MODES]
}

fn unit_scale() -> f64 {
    1.0
}

fn default_intra_area_sigma() -> f64 {
    0.28
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_records: usize,
    /// Areas are named `A1..An` and typed city/metro/rest cyclically.
    pub n_areas: usize,
    /// Base routed/great-circle multipliers per mode.
    pub mode_route_factors: [f64; NUM_MODES],
    /// Lognormal sigma of the per-(origin, destination, mode) route factor.
    pub route_noise_sigma: f64,
    /// Lognormal sigma of the per-record routed-distance jitter.
    pub record_route_sigma: f64,
    /// Lognormal sigma of per-record great-circle dispersion around the
    /// area-pair center distance (shipment endpoints scatter within areas).
    #[serde(default = "default_intra_area_sigma")]
    pub intra_area_sigma: f64,
    pub categories: Vec<CategoryProfile>,
    pub naics_profiles: Vec<NaicsProfile>,
    /// Private truck is unavailable when great-circle distance exceeds this.
    pub private_cap_mi: f64,
    /// Probability an area pair offers the residual "other" mode.
    pub other_availability: f64,
    /// Softmax temperature; higher means noisier choices.
    pub temperature: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let codes = ["01", "03", "05", "08", "15", "20", "24", "30", "35", "40"];
        let categories = codes
            .iter()
            .enumerate()
            .map(|(i, code)| {
                let flip = if i % 2 == 0 { 1.0 } else { -1.0 };
                CategoryProfile {
                    sctg: code.to_string(),
                    truck_weight_slope: 0.9 * flip,
                    parcel_weight_slope: -0.9 * flip,
                    distance_scale: if i % 2 == 0 { 0.7 } else { 1.4 },
                    hazmat_rate: if *code == "15" { 0.10 } else { 0.01 },
                }
            })
            .collect();
        let naics_profiles = vec![
            NaicsProfile {
                naics: "323".into(),
                shift: [0.0, 0.0, 0.6, 0.0, 0.0],
                weight_slope_delta: [0.3, 0.0, -1.1, 0.7, 0.0],
                distance_scale: 1.0,
            },
            NaicsProfile {
                naics: "325".into(),
                shift: [0.7, 0.0, 0.0, 0.0, 0.7],
                weight_slope_delta: [1.0, 0.0, -0.4, 0.0, 0.8],
                distance_scale: 0.6,
            },
            NaicsProfile {
                naics: "332".into(),
                shift: [0.7, 0.6, -0.5, 0.0, 0.0],
                weight_slope_delta: [1.1, 0.9, -1.1, 0.0, -0.4],
                distance_scale: 1.4,
            },
            NaicsProfile {
                naics: "423".into(),
                shift: [0.0, 0.9, 0.0, -0.5, 0.0],
                weight_slope_delta: [-0.3, 1.2, 0.0, -0.8, 0.0],
                distance_scale: 0.55,
            },
            NaicsProfile {
                naics: "454".into(),
                shift: [-0.5, 0.0, 0.9, 0.6, 0.0],
                weight_slope_delta: [-0.8, -0.3, 1.4, 0.8, 0.0],
                distance_scale: 1.6,
            },
        ];
        SynthConfig {
            n_records: 20_000,
            n_areas: 8,
            mode_route_factors: [1.15, 1.18, 1.25, 1.30, 1.45],
            route_noise_sigma: 0.65,
            record_route_sigma: 0.08,
            intra_area_sigma: default_intra_area_sigma(),
            categories,
            naics_profiles,
            private_cap_mi: 500.0,
            other_availability: 0.5,
            temperature: 0.9,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_records == 0 {
            return Err(SynthError::InvalidConfig("n_records must be positive".into()));
        }
        if self.n_areas < 2 {
            return Err(SynthError::InvalidConfig("need at least 2 areas".into()));
        }
        if self.private_cap_mi <= 0.0 {
            return Err(SynthError::InvalidConfig("distance cap must be positive".into()));
        }
        if self.categories.is_empty() || self.naics_profiles.is_empty() {
            return Err(SynthError::InvalidConfig(
                "need at least one category and one industry profile".into(),
            ));
        }
        if self.mode_route_factors.iter().any(|&f| f <= 0.0) {
            return Err(SynthError::InvalidConfig("route factors must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.other_availability) {
            return Err(SynthError::InvalidConfig(
                "other-mode availability must be a probability".into(),
            ));
        }
        if self.intra_area_sigma < 0.0 || self.route_noise_sigma < 0.0 || self.record_route_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("noise sigmas must be nonnegative".into()));
        }
        if self.temperature <= 0.0 {
            return Err(SynthError::InvalidConfig("temperature must be positive".into()));
        }
        let groups = CategoryMaps::default_sctg_groups();
        for c in &self.categories {
            if !groups.contains_key(&c.sctg) {
                return Err(SynthError::InvalidConfig(format!(
                    "unknown SCTG code {:?} in category profile",
                    c.sctg
                )));
            }
            if !(0.0..=1.0).contains(&c.hazmat_rate) {
                return Err(SynthError::InvalidConfig("hazmat rate must be a probability".into()));
            }
        }
        Ok(())
    }
}

/// True choice probabilities and the Bayes-optimal label for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub id: String,
    pub p: [f64; NUM_MODES],
    pub bayes_label: ModeLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub records: Vec<ShipmentRecord>,
    pub truth: Vec<TruthRow>,
    pub area_types: BTreeMap<String, AreaType>,
    /// Mean of the true choice probabilities (analytic expected shares).
    pub expected_shares: [f64; NUM_MODES],
    /// Mean maximum true probability — the accuracy ceiling.
    pub bayes_accuracy: f64,
}

impl SynthOutput {
    /// Writes `shipments.csv`, `truth.csv`, and `areas.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| SynthError::Io(format!("{}: {e}", dir.display())))?;
        write_shipments_csv(&dir.join("shipments.csv"), &self.records, &IngestConfig::default())
            .map_err(|e| SynthError::Io(e.to_string()))?;
        self.write_truth_csv(&dir.join("truth.csv"))?;
        let maps = CategoryMaps::with_default_groups(self.area_types.clone());
        maps.write_area_types_csv(&dir.join("areas.csv"))
            .map_err(|e| SynthError::Io(e.to_string()))?;
        Ok(())
    }

    /// Sidecar format: `id,p1,p2,p3,p4,p5,bayes_label` (label as ordinal).
    pub fn write_truth_csv(&self, path: &Path) -> Result<(), SynthError> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
        writer
            .write_record(["id", "p1", "p2", "p3", "p4", "p5", "bayes_label"])
            .map_err(|e| SynthError::Io(e.to_string()))?;
        for row in &self.truth {
            let mut fields = vec![row.id.clone()];
            fields.extend(row.p.iter().map(|v| v.to_string()));
            fields.push(row.bayes_label.ordinal().to_string());
            writer
                .write_record(&fields)
                .map_err(|e| SynthError::Io(e.to_string()))?;
        }
        writer.flush().map_err(|e| SynthError::Io(e.to_string()))
    }
}

/// Fixed per-run context shared by all records.
struct SynthContext<'a> {
    config: &'a SynthConfig,
    seed: u64,
    area_names: Vec<String>,
    area_types: Vec<AreaType>,
    positions: Vec<(f64, f64)>,
    /// `route_factors[pair][mode]`, pair = orig * n_areas + dest.
    route_factors: Vec<[f64; NUM_MODES]>,
    other_available: Vec<bool>,
    groups: BTreeMap<String, String>,
}

const AREA_TYPE_CYCLE: [AreaType; 8] = [
    AreaType::C,
    AreaType::M,
    AreaType::R,
    AreaType::C,
    AreaType::M,
    AreaType::R,
    AreaType::M,
    AreaType::C,
];

/// Intra-area shipments still move a little.
const MIN_HAUL_MI: f64 = 25.0;

impl<'a> SynthContext<'a> {
    fn new(config: &'a SynthConfig, seed: u64) -> Self {
        let n = config.n_areas;
        let area_names: Vec<String> = (1..=n).map(|k| format!("A{k}")).collect();
        let area_types: Vec<AreaType> = (0..n).map(|k| AREA_TYPE_CYCLE[k % 8]).collect();
        let mut area_rng = rng_for(seed, "areas", 0);
        let positions: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    area_rng.gen_range(0.0..1600.0),
                    area_rng.gen_range(0.0..1600.0),
                )
            })
            .collect();
        let mut route_rng = rng_for(seed, "routes", 0);
        let route_factors: Vec<[f64; NUM_MODES]> = (0..n * n)
            .map(|_| {
                let mut factors = [0.0; NUM_MODES];
                for (m, f) in factors.iter_mut().enumerate() {
                    let z: f64 = route_rng.sample(StandardNormal);
                    *f = config.mode_route_factors[m] * (config.route_noise_sigma * z).exp();
                }
                factors
            })
            .collect();
        let mut avail_rng = rng_for(seed, "other-avail", 0);
        let other_available: Vec<bool> = (0..n * n)
            .map(|_| avail_rng.gen_bool(config.other_availability))
            .collect();
        SynthContext {
            config,
            seed,
            area_names,
            area_types,
            positions,
            route_factors,
            other_available,
            groups: CategoryMaps::default_sctg_groups(),
        }
    }

    fn gc_distance(&self, orig: usize, dest: usize) -> f64 {
        let (x1, y1) = self.positions[orig];
        let (x2, y2) = self.positions[dest];
        ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt()
    }

    fn generate_one(&self, i: usize) -> (ShipmentRecord, TruthRow) {
        let config = self.config;
        let n = config.n_areas;
        let mut rng = rng_for(self.seed, "record", i as u64);

        let orig = rng.gen_range(0..n);
        let dest = rng.gen_range(0..n);
        let pair = orig * n + dest;
        let scatter: f64 = rng.sample(StandardNormal);
        let gc = self.gc_distance(orig, dest) * (config.intra_area_sigma * scatter).exp();
        let haul = gc.max(MIN_HAUL_MI);

        let category = &config.categories[rng.gen_range(0..config.categories.len())];
        let industry = &config.naics_profiles[rng.gen_range(0..config.naics_profiles.len())];

        let wz: f64 = rng.sample(StandardNormal);
        let weight_lb = (3.0 + 2.0 * wz).exp().clamp(0.1, 2.0e5);
        let vz: f64 = rng.sample(StandardNormal);
        let value_usd = (weight_lb * (1.0 + vz).exp()).clamp(1.0, 5.0e6);

        let hazmat = if rng.gen_bool(category.hazmat_rate) {
            Hazmat::Class3
        } else if rng.gen_bool(0.03) {
            Hazmat::OtherHaz
        } else {
            Hazmat::NotHaz
        };
        let temp_controlled = rng.gen_bool(0.08);
        let export_flag = rng.gen_bool(0.03);

        // Standardized drivers.
        let lw = (weight_lb.ln() - 3.0) / 2.0;
        let lv2w = (value_usd / weight_lb).ln() - 1.0;
        let routed_all: [f64; NUM_MODES] =
            std::array::from_fn(|m| self.route_factors[pair][m] * haul);
        let d: [f64; NUM_MODES] = std::array::from_fn(|m| {
            routed_all[m] / 400.0 * category.distance_scale * industry.distance_scale
        });

        let both_urban = matches!(self.area_types[orig], AreaType::C | AreaType::M)
            && matches!(self.area_types[dest], AreaType::C | AreaType::M);
        let hz3 = (hazmat == Hazmat::Class3) as u8 as f64;
        let hzo = (hazmat == Hazmat::OtherHaz) as u8 as f64;
        let temp = temp_controlled as u8 as f64;
        let export = export_flag as u8 as f64;

        let mut utilities = [0.0f64; NUM_MODES];
        let mut available = [true; NUM_MODES];
        utilities[0] = 1.1 + category.truck_weight_slope * lw - 0.30 * d[0] + 0.3 * temp;
        utilities[1] = 1.3 + 0.35 * lw - 1.30 * d[1];
        available[1] = gc <= config.private_cap_mi;
        utilities[2] = 1.0 + category.parcel_weight_slope * lw + 0.55 * lv2w - 0.18 * d[2];
        utilities[3] = -0.9 - 0.6 * lw + 1.1 * lv2w - 0.06 * d[3] + 1.2 * export + 0.5 * temp;
        available[3] = both_urban;
        // The residual mode (rail/water/pipeline) gets MORE attractive with
        // distance — long-haul economics — but only on lanes that offer it,
        // and which lanes do is not observable from any feature column.
        utilities[4] = 0.2 + 0.45 * lw + 0.60 * d[4] + 2.0 * hz3 + 0.5 * hzo;
        available[4] = self.other_available[pair];
        for m in 0..NUM_MODES {
            utilities[m] += industry.shift[m] + industry.weight_slope_delta[m] * lw;
        }

        // Softmax over the available modes.
        let mut p = [0.0f64; NUM_MODES];
        let max_u = utilities
            .iter()
            .zip(available)
            .filter(|(_, a)| *a)
            .map(|(u, _)| *u)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for m in 0..NUM_MODES {
            if available[m] {
                p[m] = ((utilities[m] - max_u) / config.temperature).exp();
                total += p[m];
            }
        }
        for v in &mut p {
            *v /= total;
        }

        // Sample the chosen mode from the true probabilities.
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut cumulative = 0.0;
        let mut chosen = NUM_MODES - 1;
        for (m, &prob) in p.iter().enumerate() {
            cumulative += prob;
            if u < cumulative {
                chosen = m;
                break;
            }
        }
        let mode = ModeLabel::from_index(chosen).expect("mode index in range");

        let jitter: f64 = rng.sample(StandardNormal);
        let routed = routed_all[chosen] * (config.record_route_sigma * jitter).exp();

        let sctg = category.sctg.clone();
        let record = ShipmentRecord {
            id: format!("S{:07}", i + 1),
            weight_lb,
            value_usd,
            sctg_group: self.groups[&sctg].clone(),
            sctg,
            naics: industry.naics.clone(),
            orig_area: self.area_names[orig].clone(),
            dest_area: self.area_names[dest].clone(),
            gc_dist_mi: gc,
            routed_dist_mi: routed,
            hazmat,
            temp_controlled,
            export_flag,
            mode,
        };
        let bayes_index = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(m, _)| m)
            .expect("nonempty");
        let truth = TruthRow {
            id: record.id.clone(),
            p,
            bayes_label: ModeLabel::from_index(bayes_index).expect("mode index in range"),
        };
        (record, truth)
    }
}

/// Generates a synthetic dataset with known choice probabilities.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let context = SynthContext::new(config, seed);
    let pairs: Vec<(ShipmentRecord, TruthRow)> = (0..config.n_records)
        .into_par_iter()
        .map(|i| context.generate_one(i))
        .collect();
    let mut records = Vec::with_capacity(pairs.len());
    let mut truth = Vec::with_capacity(pairs.len());
    for (r, t) in pairs {
        records.push(r);
        truth.push(t);
    }
    let mut expected_shares = [0.0; NUM_MODES];
    let mut bayes_accuracy = 0.0;
    for t in &truth {
        for (s, p) in expected_shares.iter_mut().zip(t.p) {
            *s += p / truth.len() as f64;
        }
        bayes_accuracy += t.p.iter().cloned().fold(0.0, f64::max) / truth.len() as f64;
    }
    let area_types = context
        .area_names
        .iter()
        .cloned()
        .zip(context.area_types.iter().copied())
        .collect();
    Ok(SynthOutput {
        records,
        truth,
        area_types,
        expected_shares,
        bayes_accuracy,
    })
}
