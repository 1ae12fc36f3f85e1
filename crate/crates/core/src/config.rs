//! Run configuration.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{PpflError, Result};
use crate::membership::DEFAULT_EPSILON_FLOOR;
use crate::model::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaSchedule {
    Constant { eta: f64 },
    /// `eta_t = eta0 / sqrt(t + 1)`.
    InvSqrt { eta0: f64 },
}

impl EtaSchedule {
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            EtaSchedule::Constant { eta } => eta,
            EtaSchedule::InvSqrt { eta0 } => eta0 / ((round + 1) as f64).sqrt(),
        }
    }

    /// Largest step size over any round.
    pub fn max_eta(&self) -> f64 {
        self.at(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Size(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Size(usize),
        }
        match Repr::deserialize(d)? {
            Repr::Size(0) => Err(serde::de::Error::custom("batch_size must be positive")),
            Repr::Size(n) => Ok(BatchSize::Size(n)),
            Repr::Name(s) if s.eq_ignore_ascii_case("full") => Ok(BatchSize::Full),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "batch_size must be a positive integer or \"full\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rbcd,
    Alternating,
    Local,
    Fedavg,
    ClusteredFl,
}

/// Optional noise and heterogeneity constants used only in the
/// alternating-variant step-size formula.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConstants {
    /// Initial optimality gap `F(z0) - F*`.
    pub delta_f: Option<f64>,
    pub sigma_1_1: Option<f64>,
    pub sigma_1_2: Option<f64>,
}

fn default_rho() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_floor() -> f64 {
    DEFAULT_EPSILON_FLOOR
}

fn default_init_scale() -> f64 {
    0.05
}

fn default_c_scale() -> f64 {
    1.0
}

fn default_batch() -> BatchSize {
    BatchSize::Full
}

/// Training configuration. The client count comes from the shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Number of canonical models (cluster models for clustered FL).
    pub k: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub eta: EtaSchedule,
    /// Multiplier of the membership step: `eta2_t = c_step_scale * eta_t`.
    #[serde(default = "default_c_scale")]
    pub c_step_scale: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Block-selection probabilities `(rho_theta, rho_c)`.
    #[serde(default = "default_rho")]
    pub rho: [f64; 2],
    #[serde(default = "default_batch")]
    pub batch_size: BatchSize,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default = "default_floor")]
    pub epsilon_floor: f64,
    #[serde(default)]
    pub seed: u64,
    /// Half-width of the uniform theta initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Smoothness overrides; analytic bounds are used when absent.
    #[serde(default)]
    pub l1: Option<f64>,
    #[serde(default)]
    pub l2: Option<f64>,
    #[serde(default)]
    pub theory: TheoryConstants,
    /// Rounds at which membership snapshots are kept. `None` means
    /// `{0, T/2, T}`.
    #[serde(default)]
    pub snapshot_rounds: Option<Vec<usize>>,
    /// Reject step sizes above the theoretical bound before running.
    #[serde(default)]
    pub enforce_step_bound: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, k: usize, rounds: usize, local_steps: usize, eta: f64) -> Self {
        Self {
            algorithm,
            k,
            rounds,
            local_steps,
            eta: EtaSchedule::Constant { eta },
            c_step_scale: 1.0,
            lambda: 0.0,
            rho: default_rho(),
            batch_size: BatchSize::Full,
            architecture: Architecture::default(),
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            seed: 0,
            init_scale: default_init_scale(),
            l1: None,
            l2: None,
            theory: TheoryConstants::default(),
            snapshot_rounds: None,
            enforce_step_bound: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(PpflError::Config {
                field: field.into(),
                reason,
            })
        };
        if self.k < 1 {
            return bad("k", "must be at least 1".into());
        }
        if self.local_steps < 1 {
            return bad("local_steps", "must be at least 1".into());
        }
        let eta = match self.eta {
            EtaSchedule::Constant { eta } => eta,
            EtaSchedule::InvSqrt { eta0 } => eta0,
        };
        if !(eta > 0.0 && eta.is_finite()) {
            return bad("eta", format!("must be positive and finite, got {eta}"));
        }
        if !(self.c_step_scale > 0.0 && self.c_step_scale.is_finite()) {
            return bad("c_step_scale", format!("must be positive, got {}", self.c_step_scale));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be nonnegative, got {}", self.lambda));
        }
        let [r1, r2] = self.rho;
        if !(r1 >= 0.0 && r2 >= 0.0) || (r1 + r2 - 1.0).abs() > 1e-12 {
            return bad("rho", format!("must be nonnegative and sum to 1, got [{r1}, {r2}]"));
        }
        if !(self.epsilon_floor >= 0.0 && self.epsilon_floor * (self.k as f64) < 1.0) {
            return bad(
                "epsilon_floor",
                format!("must lie in [0, 1/K), got {}", self.epsilon_floor),
            );
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale", "must be nonnegative".into());
        }
        for (name, v) in [("l1", self.l1), ("l2", self.l2)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(name, format!("must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    pub fn snapshot_rounds(&self) -> Vec<usize> {
        let mut r = self
            .snapshot_rounds
            .clone()
            .unwrap_or_else(|| vec![0, self.rounds / 2, self.rounds]);
        r.retain(|&t| t <= self.rounds);
        r.sort_unstable();
        r.dedup();
        r
    }
}
