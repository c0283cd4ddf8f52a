//! Model ingredients: trait grid, infectivity/susceptibility profiles, memory
//! kernel, and the initial condition, validated together as a [`ModelSpec`].
//!
//! The trait space is always a finite grid of labeled atoms with probability
//! weights; every trait integral in the toolkit is a weighted finite sum.
//! Continuous trait spaces must be pre-quadratured by the user.

mod config;
mod family;

pub use config::{KernelSection, ModelConfig, ProfileSection};
pub use family::{AgeDistribution, RateFamily};

use sha2::{Digest, Sha256};

use crate::error::ModelError;
use crate::rng::{cumulative, Stream};

/// Discrete trait space: labeled atoms with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TraitGrid {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl TraitGrid {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::Config("[traits] needs at least one node".into()));
        }
        if labels.len() != weights.len() {
            return Err(ModelError::Config(
                "[traits] labels and weights lengths differ".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::Config(
                "[traits] weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::Config(format!(
                "[traits] weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(ModelError::Config(format!(
                    "[traits] duplicate label {a:?}"
                )));
            }
        }
        Ok(TraitGrid { labels, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Initial condition: parametric product measure or an empirical sample.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Parametric {
        ages: AgeDistribution,
        /// Marginal trait probabilities (may differ from the grid weights).
        trait_probs: Vec<f64>,
    },
    Empirical { ages: Vec<f64>, traits: Vec<usize> },
}

/// Validation knobs and the infectivity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lambda_star: f64,
    /// Moment exponent of the initial-age assumption; validation only.
    pub alpha: f64,
    pub probe_age_max: f64,
    pub probe_step: f64,
    /// Initial-age quadrature truncates where the tail mass drops below this.
    pub tail_mass: f64,
}

/// Validated, immutable model. Shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    traits: TraitGrid,
    lambda: Vec<RateFamily>,
    gamma: Vec<RateFamily>,
    kernel: Vec<Vec<f64>>,
    bounds: Bounds,
    initial: InitialCondition,
    // derived
    kappa_bar: f64,
    envelope: Vec<f64>,
    envelope_cdf: Vec<f64>,
    row_cdf: Vec<Vec<f64>>,
    trait_cdf: Vec<f64>,
    renorm_factors: Option<Vec<f64>>,
    digest: String,
}

impl ModelSpec {
    /// Validate a parsed configuration and derive the quantities used by the
    /// samplers (`kappa_bar`, kernel envelope, cumulative tables, digest).
    pub fn build(config: &ModelConfig) -> Result<Self, ModelError> {
        let traits = config.traits()?;
        let m = traits.len();
        let lambda = config.lambda.resolve(m, "lambda")?;
        let gamma = config.gamma.resolve(m, "gamma")?;
        let bounds = config.bounds_resolved()?;
        let (kernel, renorm_factors) = config.kernel_resolved(&traits)?;
        let initial = config.initial_resolved(&traits)?;

        for f in lambda.iter() {
            f.validate("lambda")?;
        }
        for f in gamma.iter() {
            f.validate("gamma")?;
        }

        // Probe the profiles on a regular age grid plus their breakpoints.
        let mut probes: Vec<f64> = Vec::new();
        let steps = (bounds.probe_age_max / bounds.probe_step).round() as usize;
        probes.extend((0..=steps).map(|k| k as f64 * bounds.probe_step));
        for f in lambda.iter().chain(gamma.iter()) {
            for b in f.breakpoints() {
                if b >= 0.0 {
                    probes.push(b);
                    probes.push(b + 1e-9);
                }
            }
        }
        for j in 0..m {
            for &a in &probes {
                let lv = lambda[j].eval(a);
                if !(0.0..=bounds.lambda_star).contains(&lv) {
                    return Err(ModelError::Bound {
                        what: "lambda",
                        age: a,
                        trait_index: j,
                        value: lv,
                    });
                }
                let gv = gamma[j].eval(a);
                if !(0.0..=1.0).contains(&gv) {
                    return Err(ModelError::Bound {
                        what: "gamma",
                        age: a,
                        trait_index: j,
                        value: gv,
                    });
                }
            }
        }

        if let InitialCondition::Parametric { ages, .. } = &initial {
            if !ages.moment_finite(2.0 * bounds.alpha) {
                return Err(ModelError::Moment {
                    order: 2.0 * bounds.alpha,
                });
            }
        }

        // Kernel envelope and mean-kernel bound.
        let w = traits.weights();
        let envelope: Vec<f64> = (0..m)
            .map(|j| (0..m).map(|i| kernel[i][j]).fold(0.0, f64::max))
            .collect();
        let kappa_bar: f64 = (0..m).map(|j| envelope[j] * w[j]).sum();
        let envelope_cdf = cumulative(
            &(0..m)
                .map(|j| envelope[j] * w[j])
                .collect::<Vec<f64>>(),
        );
        let row_cdf: Vec<Vec<f64>> = (0..m)
            .map(|i| cumulative(&(0..m).map(|j| kernel[i][j] * w[j]).collect::<Vec<f64>>()))
            .collect();
        let trait_cdf = match &initial {
            InitialCondition::Parametric { trait_probs, .. } => cumulative(trait_probs),
            InitialCondition::Empirical { .. } => cumulative(w),
        };

        let mut spec = ModelSpec {
            traits,
            lambda,
            gamma,
            kernel,
            bounds,
            initial,
            kappa_bar,
            envelope,
            envelope_cdf,
            row_cdf,
            trait_cdf,
            renorm_factors,
            digest: String::new(),
        };
        spec.digest = spec.compute_digest();
        Ok(spec)
    }

    /// Parse a TOML document and build.
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let config: ModelConfig =
            toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        ModelSpec::build(&config)
    }

    /// Load from a file; relative kernel/sample paths resolve against it.
    pub fn from_path(path: &std::path::Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut config: ModelConfig =
            toml::from_str(&text).map_err(|e| ModelError::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            config.anchor_paths(dir);
        }
        ModelSpec::build(&config)
    }

    /// Canonical configuration (inline kernel, explicit defaults); round-trips
    /// through [`ModelSpec::build`] to identical numerical fields.
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig::from_spec(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_config()).expect("model config serializes")
    }

    fn compute_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// λ(a, θ_j).
    #[inline]
    pub fn lambda(&self, a: f64, j: usize) -> f64 {
        self.lambda[j].eval(a)
    }

    /// γ(a, θ_j).
    #[inline]
    pub fn gamma(&self, a: f64, j: usize) -> f64 {
        self.gamma[j].eval(a)
    }

    /// Left limit of λ at `a` (cell-oriented quadrature; `lambda` itself is
    /// the right limit by the right-closed convention).
    #[inline]
    pub fn lambda_below(&self, a: f64, j: usize) -> f64 {
        self.lambda[j].eval_below(a)
    }

    /// Left limit of γ at `a`.
    #[inline]
    pub fn gamma_below(&self, a: f64, j: usize) -> f64 {
        self.gamma[j].eval_below(a)
    }

    /// Mean of one-sided λ limits (interior quadrature node value).
    #[inline]
    pub fn lambda_mean(&self, a: f64, j: usize) -> f64 {
        self.lambda[j].eval_mean(a)
    }

    /// Mean of one-sided γ limits.
    #[inline]
    pub fn gamma_mean(&self, a: f64, j: usize) -> f64 {
        self.gamma[j].eval_mean(a)
    }

    #[inline]
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        self.kernel[i][j]
    }

    /// `sup_i K(θ_i, θ_j)`.
    #[inline]
    pub fn kernel_sup(&self, j: usize) -> f64 {
        self.envelope[j]
    }

    pub fn kernel_matrix(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn traits(&self) -> &TraitGrid {
        &self.traits
    }

    pub fn n_traits(&self) -> usize {
        self.traits.len()
    }

    pub fn lambda_star(&self) -> f64 {
        self.bounds.lambda_star
    }

    pub fn alpha(&self) -> f64 {
        self.bounds.alpha
    }

    pub fn tail_mass(&self) -> f64 {
        self.bounds.tail_mass
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Σ_j sup_i K(θ_i, θ_j) w_j, the envelope mass of the memory kernel.
    pub fn kappa_bar(&self) -> f64 {
        self.kappa_bar
    }

    pub fn initial(&self) -> &InitialCondition {
        &self.initial
    }

    pub fn lambda_families(&self) -> &[RateFamily] {
        &self.lambda
    }

    pub fn gamma_families(&self) -> &[RateFamily] {
        &self.gamma
    }

    /// Row renormalization factors, when `renormalize = true` rescaled rows.
    pub fn renorm_factors(&self) -> Option<&[f64]> {
        self.renorm_factors.as_deref()
    }

    /// Hex SHA-256 of the canonical configuration.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Age breakpoints of λ and γ across all traits (used to align grids).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .lambda
            .iter()
            .chain(self.gamma.iter())
            .flat_map(|f| f.breakpoints())
            .filter(|x| x.is_finite() && *x > 0.0)
            .collect();
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.dedup();
        b
    }

    /// Draw `n` i.i.d. initial (age, trait) pairs.
    pub fn sample_initial(&self, n: usize, stream: &mut Stream) -> Vec<(f64, usize)> {
        match &self.initial {
            InitialCondition::Parametric { ages, .. } => (0..n)
                .map(|_| {
                    let a = ages.sample(stream);
                    let j = stream.pick_cumulative(&self.trait_cdf);
                    (a, j)
                })
                .collect(),
            InitialCondition::Empirical { ages, traits } => (0..n)
                .map(|_| {
                    let r = stream.index(ages.len());
                    (ages[r], traits[r])
                })
                .collect(),
        }
    }

    /// Draw the post-infection trait given the pre-infection trait `i`:
    /// `P(j) = K(θ_i, θ_j) w_j` (normalized by Assumption on the kernel).
    #[inline]
    pub fn sample_new_trait(&self, i: usize, stream: &mut Stream) -> usize {
        stream.pick_cumulative(&self.row_cdf[i])
    }

    /// Draw a trait from the envelope proposal `sup_i K(θ_i, ·) w / kappa_bar`.
    #[inline]
    pub fn sample_envelope_trait(&self, stream: &mut Stream) -> usize {
        stream.pick_cumulative(&self.envelope_cdf)
    }
}
