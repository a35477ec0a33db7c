//! Hypersphere math: normalization, geodesic distance and von Mises-Fisher
//! densities with a normalization constant computed entirely in log space.

mod bessel;

pub use bessel::{ln_gamma, log_bessel_i};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("vector norm {0} is below 1e-12")]
    ZeroNorm(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector must have at least 2 finite components")]
    InvalidVector,
    #[error("invalid vMF parameters: kappa={kappa}, dim={dim}")]
    InvalidParams { kappa: f64, dim: usize },
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("numerical overflow: {context}")]
    NumericalOverflow { context: String },
}

/// A vector on the unit hypersphere (Euclidean norm within 1e-6 of 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    components: Vec<f64>,
}

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl UnitVector {
    /// Wraps components that are already unit-norm.
    pub fn new(components: Vec<f64>) -> Result<Self, GeometryError> {
        if components.len() < 2 || components.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidVector);
        }
        let norm = components.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::ZeroNorm(norm));
        }
        Ok(UnitVector { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dot(&self, other: &UnitVector) -> Result<f64, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Projects a vector onto the unit hypersphere.
pub fn normalize(v: &[f64]) -> Result<UnitVector, GeometryError> {
    if v.len() < 2 || v.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::InvalidVector);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(GeometryError::ZeroNorm(norm));
    }
    Ok(UnitVector {
        components: v.iter().map(|x| x / norm).collect(),
    })
}

/// Angular separation arccos(<u, v>) in [0, pi]. The inner product is
/// clamped to [-1, 1] to absorb floating-point drift.
pub fn geodesic_distance(u: &UnitVector, v: &UnitVector) -> Result<f64, GeometryError> {
    let dot = u.dot(v)?;
    Ok(dot.clamp(-1.0, 1.0).acos())
}

/// von Mises-Fisher concentration and ambient dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub kappa: f64,
    pub dim: usize,
}

impl VmfParams {
    pub fn new(kappa: f64, dim: usize) -> Result<Self, GeometryError> {
        if !kappa.is_finite() || kappa <= 0.0 || dim < 2 {
            return Err(GeometryError::InvalidParams { kappa, dim });
        }
        Ok(VmfParams { kappa, dim })
    }
}

/// log Z_d(kappa) where Z_d(k) = k^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(k)).
pub fn log_vmf_normalizer(params: VmfParams) -> Result<f64, GeometryError> {
    let d = params.dim as f64;
    let order = d / 2.0 - 1.0;
    let log_bessel = log_bessel_i(order, params.kappa)?;
    let value = order * params.kappa.ln()
        - (d / 2.0) * (2.0 * std::f64::consts::PI).ln()
        - log_bessel;
    if !value.is_finite() {
        return Err(GeometryError::NumericalOverflow {
            context: format!("log_vmf_normalizer(kappa={}, dim={})", params.kappa, params.dim),
        });
    }
    Ok(value)
}

/// Log-density of the vMF distribution: log Z_d(kappa) + kappa * <x, mu>.
pub fn log_vmf_density(
    x: &UnitVector,
    mu: &UnitVector,
    params: VmfParams,
) -> Result<f64, GeometryError> {
    if x.dim() != params.dim {
        return Err(GeometryError::DimensionMismatch(x.dim(), params.dim));
    }
    let dot = x.dot(mu)?;
    Ok(log_vmf_normalizer(params)? + params.kappa * dot)
}

/// How [`same_intent_probability`] combines the per-component densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    /// Cosine of the two responsibility vectors: a value in (0, 1] that is
    /// 1 exactly when the mixture explains both labels identically. The
    /// normalization keeps duplicated mixture components (repeated intents,
    /// the very case merging must catch) from diluting the score.
    #[default]
    Posterior,
    /// The literal mixture-density product sum (unbounded above).
    RawDensity,
}

/// Probability that two label embeddings share a generating component of a
/// uniform-weight vMF mixture with the given means.
pub fn same_intent_probability(
    li: &UnitVector,
    lj: &UnitVector,
    means: &[UnitVector],
    params: VmfParams,
    mode: ProbabilityMode,
) -> Result<f64, GeometryError> {
    if means.is_empty() {
        return Err(GeometryError::EmptyMixture);
    }
    let log_normalizer = log_vmf_normalizer(params)?;
    let mut log_pi = Vec::with_capacity(means.len());
    let mut log_pj = Vec::with_capacity(means.len());
    for mu in means {
        if mu.dim() != li.dim() {
            return Err(GeometryError::DimensionMismatch(mu.dim(), li.dim()));
        }
        log_pi.push(log_normalizer + params.kappa * li.dot(mu)?);
        log_pj.push(log_normalizer + params.kappa * lj.dot(mu)?);
    }
    match mode {
        ProbabilityMode::Posterior => {
            let ri = softmax(&log_pi);
            let rj = softmax(&log_pj);
            let dot: f64 = ri.iter().zip(&rj).map(|(a, b)| a * b).sum();
            let ni: f64 = ri.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nj: f64 = rj.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((dot / (ni * nj)).min(1.0))
        }
        ProbabilityMode::RawDensity => {
            // sum_m (1/K) p(li | mu_m) p(lj | mu_m), evaluated via
            // log-sum-exp; the final exp may legitimately overflow to +inf.
            let k = means.len() as f64;
            let joint: Vec<f64> = log_pi
                .iter()
                .zip(&log_pj)
                .map(|(a, b)| a + b - k.ln())
                .collect();
            Ok(log_sum_exp(&joint).exp())
        }
    }
}

/// Uniform-prior responsibilities over mixture components.
fn softmax(log_values: &[f64]) -> Vec<f64> {
    let max = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(components: &[f64]) -> UnitVector {
        normalize(components).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.components()[0] - 0.6).abs() < 1e-12);
        assert!((v.components()[1] - 0.8).abs() < 1e-12);

        let w = normalize(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(w.components(), &[0.0, 0.0, 1.0]);

        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(GeometryError::ZeroNorm(_))
        ));
        assert!(normalize(&[1.0]).is_err());
        assert!(normalize(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn geodesic_distance_examples() {
        let u = unit(&[1.0, 0.0]);
        let v = unit(&[0.0, 1.0]);
        let w = unit(&[-1.0, 0.0]);
        assert_eq!(geodesic_distance(&u, &u).unwrap(), 0.0);
        assert!((geodesic_distance(&u, &v).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((geodesic_distance(&u, &w).unwrap() - std::f64::consts::PI).abs() < 1e-12);

        let threed = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            geodesic_distance(&u, &threed),
            Err(GeometryError::DimensionMismatch(2, 3))
        ));
    }

    #[test]
    fn geodesic_distance_is_symmetric_and_bounded() {
        let vectors = [
            unit(&[1.0, 2.0, -0.5]),
            unit(&[-3.0, 0.1, 0.2]),
            unit(&[0.0, 1.0, 1.0]),
        ];
        for a in &vectors {
            for b in &vectors {
                let dab = geodesic_distance(a, b).unwrap();
                let dba = geodesic_distance(b, a).unwrap();
                assert!((dab - dba).abs() < 1e-12);
                assert!((0.0..=std::f64::consts::PI).contains(&dab));
            }
        }
    }

    /// d = 3 closed form: p(x | mu, kappa) = kappa e^{kappa cos theta} / (4 pi sinh kappa).
    fn log_vmf_d3_closed_form(kappa: f64, cos_theta: f64) -> f64 {
        // log sinh k = k + log(1 - e^{-2k}) - log 2, stable for large kappa.
        let log_sinh = kappa + (-(-2.0 * kappa).exp()).ln_1p() - 2.0_f64.ln();
        kappa.ln() - (4.0 * std::f64::consts::PI).ln() - log_sinh + kappa * cos_theta
    }

    #[test]
    fn vmf_density_matches_d3_closed_form() {
        let mu = unit(&[0.0, 0.0, 1.0]);
        let anti = unit(&[0.0, 0.0, -1.0]);
        for kappa in [0.1, 1.0, 10.0, 100.0] {
            let params = VmfParams::new(kappa, 3).unwrap();
            let at_mean = log_vmf_density(&mu, &mu, params).unwrap();
            let want = log_vmf_d3_closed_form(kappa, 1.0);
            assert!(
                ((at_mean - want) / want).abs() < 1e-9,
                "kappa={kappa}: {at_mean} vs {want}"
            );
            let at_antipode = log_vmf_density(&anti, &mu, params).unwrap();
            let want = log_vmf_d3_closed_form(kappa, -1.0);
            assert!(((at_antipode - want) / want).abs() < 1e-9);
        }
        // Spec anchor: kappa = 1, x = mu gives log(e / (4 pi sinh 1)) ~ -1.6925.
        let params = VmfParams::new(1.0, 3).unwrap();
        let v = log_vmf_density(&mu, &mu, params).unwrap();
        assert!((v - (-1.6924636085404864)).abs() < 1e-9);
        let v = log_vmf_density(&anti, &mu, params).unwrap();
        assert!((v - (-3.6924636085404864)).abs() < 1e-9);
    }

    #[test]
    fn vmf_density_approaches_uniform_on_circle() {
        // d = 2, kappa -> 0+: density -> 1/(2 pi) for any x.
        let mu = unit(&[1.0, 0.0]);
        let x = unit(&[0.3, -0.8]);
        let params = VmfParams::new(1e-9, 2).unwrap();
        let density = log_vmf_density(&x, &mu, params).unwrap().exp();
        assert!((density - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-6);
    }

    #[test]
    fn vmf_normalizer_monotone_decreasing_in_kappa_high_dim() {
        let mut prev = f64::INFINITY;
        for kappa in [0.5, 1.0, 8.0, 64.0, 512.0, 4096.0, 10000.0] {
            let v = log_vmf_normalizer(VmfParams::new(kappa, 1024).unwrap()).unwrap();
            assert!(v.is_finite());
            assert!(v < prev, "log Z must decrease: {v} !< {prev} at kappa={kappa}");
            prev = v;
        }
        // Also finite at the largest stated dimension.
        assert!(log_vmf_normalizer(VmfParams::new(1e4, 2048).unwrap())
            .unwrap()
            .is_finite());
    }

    #[test]
    fn same_intent_probability_single_component_is_one() {
        let params = VmfParams::new(64.0, 3).unwrap();
        let mean = unit(&[0.0, 0.0, 1.0]);
        let li = unit(&[1.0, 0.0, 0.0]);
        let lj = unit(&[0.0, 1.0, 0.0]);
        let p = same_intent_probability(&li, &lj, &[mean], params, ProbabilityMode::Posterior)
            .unwrap();
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn same_intent_probability_antipodal_components() {
        let params = VmfParams::new(50.0, 3).unwrap();
        let mu1 = unit(&[0.0, 0.0, 1.0]);
        let mu2 = unit(&[0.0, 0.0, -1.0]);
        let means = vec![mu1.clone(), mu2.clone()];

        // Opposite components: responsibilities concentrate on different
        // means, so the product sum collapses.
        let p = same_intent_probability(&mu1, &mu2, &means, params, ProbabilityMode::Posterior)
            .unwrap();
        assert!(p < 1e-6, "p = {p}");

        // Same component: both responsibility vectors are ~(1, 0).
        let p = same_intent_probability(&mu1, &mu1, &means, params, ProbabilityMode::Posterior)
            .unwrap();
        assert!(p > 1.0 - 1e-6, "p = {p}");
    }

    #[test]
    fn same_intent_probability_posterior_properties() {
        let params = VmfParams::new(64.0, 4).unwrap();
        let means = vec![
            unit(&[1.0, 0.0, 0.0, 0.0]),
            unit(&[0.0, 1.0, 0.0, 0.0]),
            unit(&[0.0, 0.0, 1.0, 0.3]),
        ];
        let li = unit(&[0.9, 0.1, 0.0, 0.1]);
        let lj = unit(&[0.2, 0.8, 0.1, 0.0]);
        let pij =
            same_intent_probability(&li, &lj, &means, params, ProbabilityMode::Posterior).unwrap();
        let pji =
            same_intent_probability(&lj, &li, &means, params, ProbabilityMode::Posterior).unwrap();
        assert!((pij - pji).abs() < 1e-12);
        assert!(pij > 0.0 && pij <= 1.0);

        // Relabeling mixture components leaves the probability unchanged.
        let shuffled = vec![means[2].clone(), means[0].clone(), means[1].clone()];
        let p2 = same_intent_probability(&li, &lj, &shuffled, params, ProbabilityMode::Posterior)
            .unwrap();
        assert!((pij - p2).abs() < 1e-12);
    }

    #[test]
    fn same_intent_probability_raw_density_mode() {
        let params = VmfParams::new(5.0, 3).unwrap();
        let mu = unit(&[0.0, 0.0, 1.0]);
        let p = same_intent_probability(&mu, &mu, std::slice::from_ref(&mu), params, ProbabilityMode::RawDensity)
            .unwrap();
        // Literal formula: p(mu|mu)^2 = (Z e^kappa)^2, a density product, not
        // a probability.
        let expected = (log_vmf_density(&mu, &mu, params).unwrap() * 2.0).exp();
        assert!(((p - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn same_intent_probability_rejects_empty_mixture() {
        let params = VmfParams::new(64.0, 3).unwrap();
        let mu = unit(&[0.0, 0.0, 1.0]);
        assert!(matches!(
            same_intent_probability(&mu, &mu, &[], params, ProbabilityMode::Posterior),
            Err(GeometryError::EmptyMixture)
        ));
    }

    #[test]
    fn rotation_invariance() {
        // A rotation in the (0,1) plane must leave distances, densities and
        // probabilities unchanged.
        let angle = 0.83_f64;
        let rotate = |v: &UnitVector| {
            let c = v.components();
            let mut out = c.to_vec();
            out[0] = angle.cos() * c[0] - angle.sin() * c[1];
            out[1] = angle.sin() * c[0] + angle.cos() * c[1];
            UnitVector::new(out).unwrap()
        };
        let params = VmfParams::new(32.0, 3).unwrap();
        let a = unit(&[0.6, 0.8, 0.0]);
        let b = unit(&[0.0, 0.6, 0.8]);
        let c = unit(&[1.0, 1.0, 1.0]);
        let (ra, rb, rc) = (rotate(&a), rotate(&b), rotate(&c));

        let d1 = geodesic_distance(&a, &b).unwrap();
        let d2 = geodesic_distance(&ra, &rb).unwrap();
        assert!((d1 - d2).abs() < 1e-12);

        let p1 = same_intent_probability(
            &a,
            &b,
            &[a.clone(), b.clone(), c],
            params,
            ProbabilityMode::Posterior,
        )
        .unwrap();
        let p2 = same_intent_probability(
            &ra,
            &rb,
            &[ra.clone(), rb.clone(), rc],
            params,
            ProbabilityMode::Posterior,
        )
        .unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_density_integrates_to_one_on_sphere() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;

        // Uniform sphere sampling via normalized Gaussians; the integral of
        // the density is the surface area (4 pi) times the mean density.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let params = VmfParams::new(5.0, 3).unwrap();
        let mu = unit(&[0.0, 0.0, 1.0]);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            let v: Vec<f64> = (0..3)
                .map(|_| {
                    // Box-Muller keeps this independent of rand_distr.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            let x = normalize(&v).unwrap();
            sum += log_vmf_density(&x, &mu, params).unwrap().exp();
        }
        let integral = 4.0 * std::f64::consts::PI * sum / n as f64;
        assert!(
            (integral - 1.0).abs() < 0.02,
            "Monte Carlo integral = {integral}"
        );
    }
}
