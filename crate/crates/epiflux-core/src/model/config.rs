//! Declarative TOML surface for [`ModelSpec`].
//!
//! Sections: `[traits]`, `[lambda]`, `[gamma]`, `[kernel]`, `[initial]`,
//! `[bounds]`. The kernel is given inline as a row-major matrix or as a path
//! to a whitespace-delimited matrix file. A serialized model round-trips to
//! the same format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::family::{AgeDistribution, RateFamily};
use super::{Bounds, InitialCondition, ModelSpec, TraitGrid};
use crate::error::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub traits: TraitsSection,
    pub lambda: ProfileSection,
    pub gamma: ProfileSection,
    pub kernel: KernelSection,
    pub initial: InitialSection,
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraitsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub weights: Vec<f64>,
}

/// A single family applied to every trait, or one family per trait node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSection {
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub single: Option<RateFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trait: Option<Vec<RateFamily>>,
}

impl ProfileSection {
    pub fn single(family: RateFamily) -> Self {
        ProfileSection {
            single: Some(family),
            per_trait: None,
        }
    }

    pub(crate) fn resolve(&self, m: usize, name: &str) -> Result<Vec<RateFamily>, ModelError> {
        match (&self.single, &self.per_trait) {
            (Some(f), None) => Ok(vec![f.clone(); m]),
            (None, Some(list)) => {
                if list.len() != m {
                    return Err(ModelError::Config(format!(
                        "[{name}] per_trait has {} entries for {m} traits",
                        list.len()
                    )));
                }
                Ok(list.clone())
            }
            (Some(_), Some(_)) => Err(ModelError::Config(format!(
                "[{name}] give either a single family or per_trait, not both"
            ))),
            (None, None) => Err(ModelError::Config(format!(
                "[{name}] missing family specification"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialSection {
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub ages: Option<AgeDistribution>,
    /// Marginal trait probabilities; defaults to the trait weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trait_probs: Option<Vec<f64>>,
    /// Whitespace-delimited rows `age trait_index`, an empirical sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ages: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_traits: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsSection {
    pub lambda_star: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_probe_age_max")]
    pub probe_age_max: f64,
    #[serde(default = "default_probe_step")]
    pub probe_step: f64,
    #[serde(default = "default_tail_mass")]
    pub tail_mass: f64,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_probe_age_max() -> f64 {
    50.0
}
fn default_probe_step() -> f64 {
    0.01
}
fn default_tail_mass() -> f64 {
    1e-8
}

impl ModelConfig {
    /// Resolve relative kernel/sample paths against `dir`.
    pub fn anchor_paths(&mut self, dir: &Path) {
        if let Some(f) = &self.kernel.file {
            if f.is_relative() {
                self.kernel.file = Some(dir.join(f));
            }
        }
        if let Some(f) = &self.initial.sample_file {
            if f.is_relative() {
                self.initial.sample_file = Some(dir.join(f));
            }
        }
    }

    pub(crate) fn traits(&self) -> Result<TraitGrid, ModelError> {
        let labels = match &self.traits.labels {
            Some(l) => l.clone(),
            None => (0..self.traits.weights.len())
                .map(|j| format!("t{j}"))
                .collect(),
        };
        TraitGrid::new(labels, self.traits.weights.clone())
    }

    pub(crate) fn bounds_resolved(&self) -> Result<Bounds, ModelError> {
        let b = &self.bounds;
        if !(b.lambda_star > 0.0) {
            return Err(ModelError::Config("[bounds] lambda_star must be > 0".into()));
        }
        if !(b.alpha > 0.0) || !(b.probe_step > 0.0) || !(b.probe_age_max > 0.0) {
            return Err(ModelError::Config(
                "[bounds] alpha, probe_step, probe_age_max must be > 0".into(),
            ));
        }
        if !(b.tail_mass > 0.0 && b.tail_mass < 1e-2) {
            return Err(ModelError::Config(
                "[bounds] tail_mass must be in (0, 1e-2)".into(),
            ));
        }
        Ok(Bounds {
            lambda_star: b.lambda_star,
            alpha: b.alpha,
            probe_age_max: b.probe_age_max,
            probe_step: b.probe_step,
            tail_mass: b.tail_mass,
        })
    }

    pub(crate) fn kernel_resolved(
        &self,
        traits: &TraitGrid,
    ) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>), ModelError> {
        let m = traits.len();
        let mut k = match (&self.kernel.matrix, &self.kernel.file) {
            (Some(mat), None) => mat.clone(),
            (None, Some(path)) => read_matrix(path)?,
            (Some(_), Some(_)) => {
                return Err(ModelError::Config(
                    "[kernel] give either matrix or file, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ModelError::Config("[kernel] missing matrix or file".into()))
            }
        };
        if k.len() != m || k.iter().any(|row| row.len() != m) {
            return Err(ModelError::Config(format!(
                "[kernel] expected a {m}x{m} matrix"
            )));
        }
        if k.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::Config(
                "[kernel] entries must be finite and nonnegative".into(),
            ));
        }
        let w = traits.weights();
        let mut factors = vec![1.0; m];
        for (i, row) in k.iter_mut().enumerate() {
            let sum: f64 = row.iter().zip(w).map(|(kij, wj)| kij * wj).sum();
            if (sum - 1.0).abs() > 1e-10 {
                if self.kernel.renormalize {
                    if sum <= 0.0 {
                        return Err(ModelError::Normalization { row: i, sum });
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                    factors[i] = sum;
                } else {
                    return Err(ModelError::Normalization { row: i, sum });
                }
            }
        }
        let renorm = if self.kernel.renormalize {
            Some(factors)
        } else {
            None
        };
        Ok((k, renorm))
    }

    pub(crate) fn initial_resolved(
        &self,
        traits: &TraitGrid,
    ) -> Result<InitialCondition, ModelError> {
        let m = traits.len();
        let sec = &self.initial;
        let empirical_inline = sec.sample_ages.is_some() || sec.sample_traits.is_some();
        match (&sec.ages, &sec.sample_file, empirical_inline) {
            (Some(d), None, false) => {
                d.validate()?;
                let probs = match &sec.trait_probs {
                    Some(p) => {
                        if p.len() != m
                            || p.iter().any(|x| !x.is_finite() || *x < 0.0)
                            || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12
                        {
                            return Err(ModelError::Config(
                                "[initial] trait_probs must be a probability vector over the traits"
                                    .into(),
                            ));
                        }
                        p.clone()
                    }
                    None => traits.weights().to_vec(),
                };
                Ok(InitialCondition::Parametric {
                    ages: d.clone(),
                    trait_probs: probs,
                })
            }
            (None, Some(path), false) => {
                let rows = read_matrix(path)?;
                let mut ages = Vec::with_capacity(rows.len());
                let mut tr = Vec::with_capacity(rows.len());
                for row in rows {
                    if row.len() != 2 {
                        return Err(ModelError::Config(
                            "[initial] sample_file rows must be `age trait_index`".into(),
                        ));
                    }
                    ages.push(row[0]);
                    tr.push(row[1] as usize);
                }
                validate_empirical(&ages, &tr, m)?;
                Ok(InitialCondition::Empirical { ages, traits: tr })
            }
            (None, None, true) => {
                let ages = sec.sample_ages.clone().unwrap_or_default();
                let tr = sec.sample_traits.clone().unwrap_or_default();
                validate_empirical(&ages, &tr, m)?;
                Ok(InitialCondition::Empirical { ages, traits: tr })
            }
            (None, None, false) => Err(ModelError::Config(
                "[initial] missing age_family or sample data".into(),
            )),
            _ => Err(ModelError::Config(
                "[initial] give exactly one of age_family, sample_file, or inline samples".into(),
            )),
        }
    }

    /// Canonical config for a built spec: per-trait profiles, inline kernel,
    /// explicit bounds.
    pub(crate) fn from_spec(spec: &ModelSpec) -> ModelConfig {
        let (initial, trait_probs, samples) = match spec.initial() {
            InitialCondition::Parametric { ages, trait_probs } => {
                (Some(ages.clone()), Some(trait_probs.clone()), None)
            }
            InitialCondition::Empirical { ages, traits } => {
                (None, None, Some((ages.clone(), traits.clone())))
            }
        };
        ModelConfig {
            traits: TraitsSection {
                labels: Some(spec.traits().labels().to_vec()),
                weights: spec.traits().weights().to_vec(),
            },
            lambda: ProfileSection {
                single: None,
                per_trait: Some(spec.lambda_families().to_vec()),
            },
            gamma: ProfileSection {
                single: None,
                per_trait: Some(spec.gamma_families().to_vec()),
            },
            kernel: KernelSection {
                matrix: Some(spec.kernel_matrix().to_vec()),
                file: None,
                renormalize: false,
            },
            initial: InitialSection {
                ages: initial,
                trait_probs,
                sample_file: None,
                sample_ages: samples.as_ref().map(|(a, _)| a.clone()),
                sample_traits: samples.map(|(_, t)| t),
            },
            bounds: BoundsSection {
                lambda_star: spec.bounds().lambda_star,
                alpha: spec.bounds().alpha,
                probe_age_max: spec.bounds().probe_age_max,
                probe_step: spec.bounds().probe_step,
                tail_mass: spec.bounds().tail_mass,
            },
        }
    }
}

fn validate_empirical(ages: &[f64], traits: &[usize], m: usize) -> Result<(), ModelError> {
    if ages.is_empty() || ages.len() != traits.len() {
        return Err(ModelError::Config(
            "[initial] empirical sample needs matching nonempty ages/traits".into(),
        ));
    }
    if ages.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(ModelError::Config(
            "[initial] empirical ages must be finite and nonnegative".into(),
        ));
    }
    if traits.iter().any(|j| *j >= m) {
        return Err(ModelError::Config(
            "[initial] empirical trait index out of range".into(),
        ));
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => {
                return Err(ModelError::Config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn missing_initial_section_names_it() {
        let text = presets::MODEL_A
            .lines()
            .filter(|l| !l.contains("[initial]") && !l.contains("age_family") && !l.contains("rate = 1.0"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = ModelSpec::from_toml(&text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("initial"), "message should name the section: {msg}");
    }

    #[test]
    fn kernel_from_file() {
        let dir = std::env::temp_dir().join(format!("epiflux-k-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("k.txt"), "1.6 0.4\n0.6 1.4\n").unwrap();
        let text = presets::MODEL_B_TWO_TRAIT.replace(
            "matrix = [[1.6, 0.4], [0.6, 1.4]]",
            &format!("file = {:?}", dir.join("k.txt")),
        );
        let spec = ModelSpec::from_toml(&text).unwrap();
        assert!((spec.kernel(0, 0) - 1.6).abs() < 1e-15);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn per_trait_profiles() {
        let text = r#"
[traits]
weights = [0.5, 0.5]

[lambda]
per_trait = [
  { family = "constant", value = 0.3 },
  { family = "constant", value = 0.7 },
]

[gamma]
family = "constant"
value = 1.0

[kernel]
matrix = [[1.0, 1.0], [1.0, 1.0]]

[initial]
age_family = "exponential"
rate = 1.0

[bounds]
lambda_star = 1.0
"#;
        let spec = ModelSpec::from_toml(text).unwrap();
        assert_eq!(spec.lambda(9.0, 0), 0.3);
        assert_eq!(spec.lambda(9.0, 1), 0.7);
    }

    #[test]
    fn empirical_initial_inline() {
        let text = presets::MODEL_B.replace(
            "age_family = \"exponential\"\nrate = 1.0",
            "sample_ages = [0.5, 1.5, 2.5]\nsample_traits = [0, 0, 0]",
        );
        let spec = ModelSpec::from_toml(&text).unwrap();
        match spec.initial() {
            InitialCondition::Empirical { ages, .. } => assert_eq!(ages.len(), 3),
            other => panic!("expected empirical, got {other:?}"),
        }
    }
}
