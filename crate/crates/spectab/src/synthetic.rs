//! Structure-controlled synthetic regression data.
//!
//! Features are partitioned into k balanced contiguous groups. Each sample
//! draws one latent value per group; a feature is its group latent times a
//! fixed per-feature weight plus Gaussian noise, and the target is a fixed
//! affine function of one designated group's latent. Small k means strongly
//! associated feature blocks, large k means nearly independent features.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub noise_std: f64,
    pub latent_range: (f64, f64),
    pub weight_range: (f64, f64),
    /// Index of the group whose latent drives the target.
    pub target_group: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(d: usize, k: usize, n: usize, seed: u64) -> Self {
        SyntheticSpec {
            d,
            k,
            n,
            noise_std: 0.1,
            latent_range: (-2.0, 2.0),
            weight_range: (-1.0, 1.0),
            target_group: 0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::EmptyInput("d and n must be positive".into()));
        }
        if self.k == 0 || self.k > self.d {
            return Err(Error::InvalidArgument(format!(
                "k must satisfy 1 <= k <= d, got k={} d={}",
                self.k, self.d
            )));
        }
        if self.target_group >= self.k {
            return Err(Error::InvalidArgument(format!(
                "target_group {} out of range for k={}",
                self.target_group, self.k
            )));
        }
        if self.noise_std <= 0.0 {
            return Err(Error::InvalidArgument("noise_std must be positive".into()));
        }
        if self.latent_range.0 >= self.latent_range.1
            || self.weight_range.0 >= self.weight_range.1
        {
            return Err(Error::InvalidArgument("ranges must be nonempty intervals".into()));
        }
        Ok(())
    }
}

/// Everything the generator decided, for downstream evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: Vec<Vec<usize>>,
    pub target_group: usize,
    pub feature_weights: Vec<f64>,
    pub target_weight: f64,
    pub target_bias: f64,
    /// Per-sample group latents (n x k), kept for correlation checks.
    pub latents: Vec<Vec<f64>>,
}

/// Structure level implied by the group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureRegime {
    High,
    Moderate,
    Low,
}

/// Balanced contiguous partition of `0..d` into `k` groups whose sizes
/// differ by at most one.
pub fn balanced_partition(d: usize, k: usize) -> Vec<Vec<usize>> {
    let base = d / k;
    let extra = d % k;
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        groups.push((start..start + size).collect());
        start += size;
    }
    groups
}

/// Regime boundaries proportional to the reference d=30 thresholds
/// (high: k <= 8, low: k > 22); in-between counts are moderate.
pub fn structure_regime(d: usize, k: usize) -> StructureRegime {
    let ratio = k as f64 / d as f64;
    if ratio <= 8.0 / 30.0 {
        StructureRegime::High
    } else if ratio > 22.0 / 30.0 {
        StructureRegime::Low
    } else {
        StructureRegime::Moderate
    }
}

/// Generates the dataset: X is n x d, y has length n. Deterministic for a
/// given spec (including seed).
pub fn generate(spec: &SyntheticSpec) -> Result<(Array2<f64>, Vec<f64>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let groups = balanced_partition(spec.d, spec.k);
    let mut group_of = vec![0usize; spec.d];
    for (g, members) in groups.iter().enumerate() {
        for &f in members {
            group_of[f] = g;
        }
    }

    let (w_lo, w_hi) = spec.weight_range;
    let feature_weights: Vec<f64> = (0..spec.d).map(|_| rng.gen_range(w_lo..w_hi)).collect();
    // The target function is one fixed affine map for the whole dataset.
    let target_weight = rng.gen_range(w_lo..w_hi);
    let target_bias = rng.gen_range(w_lo..w_hi);

    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| Error::InvalidArgument(format!("bad noise std: {e}")))?;
    let (t_lo, t_hi) = spec.latent_range;
    let mut x = Array2::<f64>::zeros((spec.n, spec.d));
    let mut y = vec![0.0; spec.n];
    let mut latents = Vec::with_capacity(spec.n);
    for t in 0..spec.n {
        let theta: Vec<f64> = (0..spec.k).map(|_| rng.gen_range(t_lo..t_hi)).collect();
        for f in 0..spec.d {
            let eps: f64 = noise.sample(&mut rng);
            x[[t, f]] = theta[group_of[f]] * feature_weights[f] + eps;
        }
        y[t] = target_weight * theta[spec.target_group] + target_bias;
        latents.push(theta);
    }

    let truth = GroundTruth {
        groups,
        target_group: spec.target_group,
        feature_weights,
        target_weight,
        target_bias,
        latents,
    };
    Ok((x, y, truth))
}

/// Writes the dataset as a CSV with headers `x1..xd,y` plus a
/// `.truth.json` sidecar holding the ground truth (without latents).
pub fn save_dataset(
    x: &Array2<f64>,
    y: &[f64],
    truth: &GroundTruth,
    csv_path: &Path,
) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but y has {}",
            x.nrows(),
            y.len()
        )));
    }
    let mut writer = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    writer.write_record(&header)?;
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        fields.push(format!("{:.17e}", y[i]));
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    let slim = GroundTruth { latents: Vec::new(), ..truth.clone() };
    let mut meta = csv_path.as_os_str().to_os_string();
    meta.push(".truth.json");
    std::fs::write(meta, serde_json::to_string_pretty(&slim)?)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]; the ground truth is loaded
/// when its sidecar exists.
pub fn load_dataset(csv_path: &Path) -> Result<(Array2<f64>, Vec<f64>, Option<GroundTruth>)> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let ncols = headers.len();
    if ncols < 2 {
        return Err(Error::InvalidArgument("dataset needs features and a target".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::InvalidArgument(format!("bad dataset cell: {e}")))?);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("dataset has no rows".into()));
    }
    let d = ncols - 1;
    let mut x = Array2::<f64>::zeros((rows.len(), d));
    let mut y = vec![0.0; rows.len()];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::InvalidArgument("ragged dataset rows".into()));
        }
        for j in 0..d {
            x[[i, j]] = row[j];
        }
        y[i] = row[d];
    }
    let mut meta = csv_path.as_os_str().to_os_string();
    meta.push(".truth.json");
    let truth = match std::fs::read_to_string(meta) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    Ok((x, y, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            cov += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        cov / (va * vb).sqrt()
    }

    #[test]
    fn partition_is_balanced_and_contiguous() {
        for (d, k) in [(30, 4), (30, 15), (30, 25), (7, 3), (5, 5), (10, 1)] {
            let groups = balanced_partition(d, k);
            assert_eq!(groups.len(), k);
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let max = sizes.iter().max().unwrap();
            let min = sizes.iter().min().unwrap();
            assert!(max - min <= 1, "d={d} k={k} sizes {sizes:?}");
            let flat: Vec<usize> = groups.concat();
            assert_eq!(flat, (0..d).collect::<Vec<_>>());
        }
    }

    #[test]
    fn regime_boundaries_match_reference() {
        assert_eq!(structure_regime(30, 4), StructureRegime::High);
        assert_eq!(structure_regime(30, 8), StructureRegime::High);
        assert_eq!(structure_regime(30, 15), StructureRegime::Moderate);
        assert_eq!(structure_regime(30, 22), StructureRegime::Moderate);
        assert_eq!(structure_regime(30, 25), StructureRegime::Low);
        // Proportional scaling for other d.
        assert_eq!(structure_regime(60, 16), StructureRegime::High);
        assert_eq!(structure_regime(60, 44), StructureRegime::Moderate);
        assert_eq!(structure_regime(60, 45), StructureRegime::Low);
    }

    #[test]
    fn one_group_per_feature_gives_independent_features() {
        let mut passes = 0;
        for seed in 1..=5u64 {
            let spec = SyntheticSpec::new(6, 6, 2000, seed);
            let (x, _, _) = generate(&spec).unwrap();
            let mut ok = true;
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let ci: Vec<f64> = x.column(i).to_vec();
                    let cj: Vec<f64> = x.column(j).to_vec();
                    if corr(&ci, &cj).abs() >= 0.1 {
                        ok = false;
                    }
                }
            }
            if ok {
                passes += 1;
            }
        }
        assert!(passes >= 4, "only {passes}/5 seeds had all |corr| < 0.1");
    }

    #[test]
    fn single_group_couples_strong_features() {
        let mut passes = 0;
        for seed in 1..=5u64 {
            let spec = SyntheticSpec::new(6, 1, 2000, seed);
            let (x, _, truth) = generate(&spec).unwrap();
            let strong: Vec<usize> = (0..6)
                .filter(|&f| truth.feature_weights[f].abs() > 0.3)
                .collect();
            let mut ok = true;
            for (a, &i) in strong.iter().enumerate() {
                for &j in &strong[a + 1..] {
                    let ci: Vec<f64> = x.column(i).to_vec();
                    let cj: Vec<f64> = x.column(j).to_vec();
                    if corr(&ci, &cj).abs() <= 0.9 {
                        ok = false;
                    }
                }
            }
            if ok {
                passes += 1;
            }
        }
        assert!(passes >= 4, "only {passes}/5 seeds coupled strong features");
    }

    #[test]
    fn target_is_affine_in_target_latent() {
        let spec = SyntheticSpec::new(10, 3, 500, 7);
        let (_, y, truth) = generate(&spec).unwrap();
        let theta: Vec<f64> = truth.latents.iter().map(|t| t[truth.target_group]).collect();
        assert_relative_eq!(corr(&y, &theta).abs(), 1.0, epsilon = 1e-12);
        for (i, t) in theta.iter().enumerate() {
            assert_relative_eq!(
                y[i],
                truth.target_weight * t + truth.target_bias,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn within_group_correlation_matches_population_formula() {
        let mut spec = SyntheticSpec::new(4, 1, 10000, 11);
        spec.noise_std = 0.1;
        let (x, _, truth) = generate(&spec).unwrap();
        let var_theta = (2.0f64 - (-2.0)).powi(2) / 12.0; // U(-2,2) variance = 4/3
        let s2 = spec.noise_std * spec.noise_std;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (wi, wj) = (truth.feature_weights[i], truth.feature_weights[j]);
                let expected = (wi * wj * var_theta).abs()
                    / ((wi * wi * var_theta + s2) * (wj * wj * var_theta + s2)).sqrt();
                let ci: Vec<f64> = x.column(i).to_vec();
                let cj: Vec<f64> = x.column(j).to_vec();
                let got = corr(&ci, &cj).abs();
                assert!(
                    (got - expected).abs() < 0.05,
                    "pair ({i},{j}): got {got}, expected {expected}"
                );
            }
        }
    }

    #[test]
    fn cross_group_correlation_vanishes() {
        let spec = SyntheticSpec::new(8, 2, 10000, 13);
        let (x, _, truth) = generate(&spec).unwrap();
        for &i in &truth.groups[0] {
            for &j in &truth.groups[1] {
                let ci: Vec<f64> = x.column(i).to_vec();
                let cj: Vec<f64> = x.column(j).to_vec();
                assert!(corr(&ci, &cj).abs() < 0.05, "cross pair ({i},{j})");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSpec::new(12, 3, 100, 99);
        let (x1, y1, t1) = generate(&spec).unwrap();
        let (x2, y2, t2) = generate(&spec).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
        assert_eq!(t1.feature_weights, t2.feature_weights);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&SyntheticSpec::new(5, 6, 10, 0)).is_err());
        assert!(generate(&SyntheticSpec::new(5, 0, 10, 0)).is_err());
        let mut bad_target = SyntheticSpec::new(5, 2, 10, 0);
        bad_target.target_group = 2;
        assert!(generate(&bad_target).is_err());
        let mut bad_noise = SyntheticSpec::new(5, 2, 10, 0);
        bad_noise.noise_std = 0.0;
        assert!(generate(&bad_noise).is_err());
    }

    #[test]
    fn dataset_roundtrips_through_csv() {
        let spec = SyntheticSpec::new(4, 2, 20, 3);
        let (x, y, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&x, &y, &truth, &path).unwrap();
        let (x2, y2, truth2) = load_dataset(&path).unwrap();
        assert_eq!(x, x2);
        assert_eq!(y, y2);
        let truth2 = truth2.unwrap();
        assert_eq!(truth2.groups, truth.groups);
        assert_eq!(truth2.target_group, truth.target_group);
    }
}
