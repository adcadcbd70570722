//! Run configuration: one JSON file, command-line flags override fields.
//!
//! Every field has a default, and the defaults reproduce the acceptance suite.
//! Hard caps on budgets:
//!
//! | field               | cap        |
//! |---------------------|------------|
//! | `cf_depth`          | 25         |
//! | `depth`             | 2          |
//! | `lift_samples`      | 100 000    |
//! | `validation_points` | 100 000    |
//! | `renorm_samples`    | 1 000      |
//! | `pc_iterations`     | 2 000 000  |
//! | `porosity_points`   | 1 000      |
//! | `siegel_iterations` | 100 000    |
//! | `julia_samples`     | 10 000     |
//! | `orbit_steps`       | 1 000 000  |
//! | `shadow_pixels`     | 4 096      |

use std::path::{Path, PathBuf};

use parabolic_core::arith::{cf_expand, cf_from_digits, is_high_type, CfDigits, HighTypeAngle};
use parabolic_core::fatou::FittedConstants;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Continued-fraction digits; a list shorter than `cf_depth` is repeated periodically.
    pub alpha_digits: Option<Vec<u32>>,
    /// Alternative to `alpha_digits`: a real angle, expanded into digits.
    pub alpha_real: Option<f64>,
    pub cf_depth: usize,
    pub type_floor: u32,
    pub abel_tol: f64,
    pub inv_tol: f64,
    /// Tower depth, at most 2.
    pub depth: usize,
    pub seed: u64,
    /// Where outputs go; not part of the report or the hash.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// Angles used for the lift, chart, model and main-estimate experiments.
    pub probe_alphas: Vec<f64>,
    /// Radius parameter `r` of the decay bounds.
    pub r: f64,
    pub lift_samples: usize,
    pub validation_points: usize,
    pub renorm_samples: usize,
    pub pc_iterations: usize,
    pub box_scales: Vec<u32>,
    pub porosity_points: usize,
    pub porosity_scales: Vec<u32>,
    pub siegel_iterations: usize,
    pub siegel_tol: f64,
    pub julia_samples: usize,
    pub orbit_steps: usize,
    /// Typical-orbit box scale exponent: `eps = 2^-m`.
    pub orbit_eps_exp: u32,
    pub shadow_pixels: usize,
    /// Points of the post-critical cloud tested against the shadows.
    pub containment_points: usize,
    pub constants: FittedConstants,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha_digits: Some(vec![50]),
            alpha_real: None,
            cf_depth: 20,
            type_floor: 50,
            abel_tol: 1e-6,
            inv_tol: 1e-8,
            depth: 1,
            seed: 7,
            out: PathBuf::from("out"),
            probe_alphas: vec![0.02, 0.01],
            r: 0.5,
            lift_samples: 1000,
            validation_points: 1000,
            renorm_samples: 20,
            pc_iterations: 100_000,
            box_scales: (2..=12).collect(),
            porosity_points: 20,
            porosity_scales: (2..=8).collect(),
            siegel_iterations: 10_000,
            siegel_tol: 1e-3,
            julia_samples: 100,
            orbit_steps: 100_000,
            orbit_eps_exp: 6,
            shadow_pixels: 2048,
            containment_points: 500,
            constants: FittedConstants::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha_digits: Option<Vec<u32>>,
    pub depth: Option<usize>,
}

fn cap(name: &str, value: usize, lo: usize, hi: usize) -> Result<(), ConfigError> {
    if value < lo || value > hi {
        return bad(format!("{name} = {value} outside [{lo}, {hi}]"));
    }
    Ok(())
}

fn positive(name: &str, value: f64) -> Result<(), ConfigError> {
    if !(value > 0.0 && value.is_finite()) {
        return bad(format!("{name} must be a positive finite number, got {value}"));
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("reading {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("parsing {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        if let Some(d) = &over.alpha_digits {
            cfg.alpha_digits = Some(d.clone());
            cfg.alpha_real = None;
        }
        if let Some(d) = over.depth {
            cfg.depth = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("abel_tol", self.abel_tol)?;
        positive("inv_tol", self.inv_tol)?;
        positive("r", self.r)?;
        positive("siegel_tol", self.siegel_tol)?;
        if self.depth > 2 {
            return bad(format!("depth = {} exceeds 2", self.depth));
        }
        cap("cf_depth", self.cf_depth, self.depth + 1, 25)?;
        cap("lift_samples", self.lift_samples, 2, 100_000)?;
        cap("validation_points", self.validation_points, 1, 100_000)?;
        cap("renorm_samples", self.renorm_samples, 1, 1000)?;
        cap("pc_iterations", self.pc_iterations, 1, 2_000_000)?;
        cap("porosity_points", self.porosity_points, 1, 1000)?;
        cap("siegel_iterations", self.siegel_iterations, 1, 100_000)?;
        cap("julia_samples", self.julia_samples, 1, 10_000)?;
        cap("orbit_steps", self.orbit_steps, 2, 1_000_000)?;
        cap("shadow_pixels", self.shadow_pixels, 64, 4096)?;
        cap("containment_points", self.containment_points, 1, self.pc_iterations)?;
        for &m in self.box_scales.iter().chain(&self.porosity_scales).chain([&self.orbit_eps_exp]) {
            if !(2..=14).contains(&m) {
                return bad(format!("dyadic exponent {m} outside [2, 14]"));
            }
        }
        if self.probe_alphas.is_empty() || self.probe_alphas.iter().any(|&a| !(a > 0.0 && a <= 0.05)) {
            return bad("probe_alphas must be nonempty, each in (0, 0.05]");
        }
        if self.type_floor < self.constants.required_floor() {
            return bad(format!(
                "type_floor {} below the floor {} required by k' and k_bold",
                self.type_floor,
                self.constants.required_floor()
            ));
        }
        let digits = self.digits()?;
        if !is_high_type(&digits, self.type_floor) {
            return bad(format!("digits {:?} are not all >= type_floor {}", digits.digits(), self.type_floor));
        }
        Ok(())
    }

    pub fn digits(&self) -> Result<CfDigits, ConfigError> {
        let digits = match (&self.alpha_digits, self.alpha_real) {
            (Some(_), Some(_)) => return bad("give alpha_digits or alpha_real, not both"),
            (None, None) => return bad("no angle given"),
            (Some(d), None) => {
                if d.is_empty() {
                    return bad("alpha_digits is empty");
                }
                CfDigits::periodic(d, self.cf_depth).map_err(|e| ConfigError(e.to_string()))?
            }
            (None, Some(x)) => cf_expand(x, self.cf_depth, 1e-15).map_err(|e| ConfigError(e.to_string()))?,
        };
        if digits.depth() < self.cf_depth {
            return bad(format!("angle determines only {} digits, cf_depth is {}", digits.depth(), self.cf_depth));
        }
        Ok(digits)
    }

    pub fn angle(&self) -> Result<HighTypeAngle, ConfigError> {
        cf_from_digits(&self.digits()?, self.cf_depth).map_err(|e| ConfigError(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// A per-task seed derived from the run seed.
    pub fn sub_seed(&self, tag: u64) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag)
    }

    pub fn orbit_eps(&self) -> f64 {
        2f64.powi(-(self.orbit_eps_exp as i32))
    }
}
