//! Sweep configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lorentz_wente::quantization::{SequenceKind, TreeConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LorentzCheck,
    WenteSweep,
    HarmonicSweep,
    Lr1Sweep,
    FirstOrderSweep,
    WeakL2,
    PartitionFuzz,
    BubbleDemo,
    Pohozaev,
}

impl Experiment {
    pub fn id(self) -> &'static str {
        match self {
            Self::LorentzCheck => "lorentz-check",
            Self::WenteSweep => "wente-sweep",
            Self::HarmonicSweep => "harmonic-sweep",
            Self::Lr1Sweep => "lr1-sweep",
            Self::FirstOrderSweep => "first-order-sweep",
            Self::WeakL2 => "weak-l2",
            Self::PartitionFuzz => "partition-fuzz",
            Self::BubbleDemo => "bubble-demo",
            Self::Pohozaev => "pohozaev",
        }
    }

    /// Radial nodes per octave when the configuration leaves it open.
    fn default_per_octave(self) -> usize {
        match self {
            Self::Pohozaev | Self::LorentzCheck => 64,
            _ => 32,
        }
    }
}

/// Everything a single experiment run needs. Missing fields take defaults;
/// unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Must match the subcommand when present.
    pub experiment: Option<Experiment>,
    /// ε ladder, each a power of two in (0, 1/4].
    pub eps: Vec<f64>,
    /// Restriction factor for harmonic sweeps and the log identity.
    pub lambda: Option<f64>,
    /// Angular nodes, a power of two in [64, 4096].
    pub n_theta: usize,
    /// Radial nodes per octave, a power of two in [8, 256].
    pub per_octave: Option<usize>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    /// Lemma name: `wente`, `l4`, `2.2`, `LR0` for Wente sweeps and `l1`, `l3` for harmonic sweeps.
    pub lemma: Option<String>,
    pub n_modes: usize,
    /// Outer-mean bound `K`.
    pub k_bound: f64,
    pub kind: SequenceKind,
    pub ks: Vec<u32>,
    pub rs: Vec<f64>,
    pub tree: TreeConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            eps: (6..=12).map(|d| (-(d as f64)).exp2()).collect(),
            lambda: None,
            n_theta: 64,
            per_octave: None,
            seeds: (0..8).collect(),
            out: None,
            baseline: None,
            lemma: None,
            n_modes: 64,
            k_bound: 1.0,
            kind: SequenceKind::Single,
            ks: (5..=12).collect(),
            rs: vec![0.5, 0.25, 0.125],
            tree: TreeConfig::half_quantum(),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Config(msg.into()))
}

fn power_of_two_in(name: &str, v: usize, lo: usize, hi: usize) -> Result<(), CliError> {
    if !v.is_power_of_two() || v < lo || v > hi {
        return config_err(format!("{name} = {v} must be a power of two in [{lo}, {hi}]"));
    }
    Ok(())
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn per_octave_for(&self, exp: Experiment) -> usize {
        self.per_octave.unwrap_or(exp.default_per_octave())
    }

    pub fn validate(&self, exp: Experiment) -> Result<(), CliError> {
        if let Some(e) = self.experiment {
            if e != exp {
                return config_err(format!("config is for {} but {} was requested", e.id(), exp.id()));
            }
        }
        if self.eps.is_empty() {
            return config_err("ε ladder is empty");
        }
        for &e in &self.eps {
            if !(e > 0.0 && e <= 0.25) || e.log2().fract() != 0.0 {
                return config_err(format!("ε = {e} must be a power of two in (0, 1/4]"));
            }
        }
        let mut sorted = self.eps.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup();
        if sorted.len() != self.eps.len() {
            return config_err("ε ladder has repeated values");
        }
        power_of_two_in("n_theta", self.n_theta, 64, 4096)?;
        power_of_two_in("per_octave", self.per_octave_for(exp), 8, 256)?;
        power_of_two_in("tree.n_theta", self.tree.n_theta, 64, 4096)?;
        if self.seeds.is_empty() {
            return config_err("seed list is empty");
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return config_err(format!("λ = {l} must be positive"));
            }
        }
        if exp == Experiment::LorentzCheck
            && self.lambda.unwrap_or(2.0) * self.eps.iter().fold(0.0, |a: f64, b| a.max(*b)) >= 1.0
        {
            return config_err("λε must stay below 1 for the log identity");
        }
        if self.n_modes == 0 || !(self.k_bound > 0.0) {
            return config_err("n_modes and k_bound must be positive");
        }
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > 20) {
            return config_err("ks must be a nonempty list in [1, 20]");
        }
        if self.rs.is_empty() || self.rs.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return config_err("rs must be a nonempty list in (0, 1]");
        }
        match (exp, self.lemma.as_deref()) {
            (_, None) => {}
            (Experiment::WenteSweep, Some("wente" | "l4" | "2.2" | "LR0")) => {}
            (Experiment::HarmonicSweep, Some("l1" | "l3")) => {}
            (_, Some(l)) => return config_err(format!("lemma {l} does not apply to {}", exp.id())),
        }
        Ok(())
    }

    /// Ladder sorted from the largest ε down, the order plateaus are calibrated in.
    pub fn ladder(&self) -> Vec<f64> {
        let mut l = self.eps.clone();
        l.sort_by(|a, b| b.total_cmp(a));
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_experiment() {
        let cfg = SweepConfig::default();
        for exp in [Experiment::LorentzCheck, Experiment::WenteSweep, Experiment::BubbleDemo, Experiment::Pohozaev] {
            cfg.validate(exp).unwrap();
        }
    }

    #[test]
    fn rejects_bad_ladders_and_grids() {
        let bad = |f: &dyn Fn(&mut SweepConfig)| {
            let mut c = SweepConfig::default();
            f(&mut c);
            matches!(c.validate(Experiment::WenteSweep), Err(CliError::Config(_)))
        };
        assert!(bad(&|c| c.eps.clear()));
        assert!(bad(&|c| c.eps = vec![0.5]));
        assert!(bad(&|c| c.eps = vec![0.1]));
        assert!(bad(&|c| c.eps = vec![0.125, 0.125]));
        assert!(bad(&|c| c.n_theta = 32));
        assert!(bad(&|c| c.n_theta = 96));
        assert!(bad(&|c| c.n_theta = 8192));
        assert!(bad(&|c| c.seeds.clear()));
        assert!(bad(&|c| c.lemma = Some("l1".into())));
        assert!(bad(&|c| c.experiment = Some(Experiment::Pohozaev)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<SweepConfig>(r#"{"epsilon": [0.25]}"#).is_err());
        let c: SweepConfig = serde_json::from_str(r#"{"eps": [0.25], "experiment": "wente-sweep"}"#).unwrap();
        assert_eq!(c.experiment, Some(Experiment::WenteSweep));
        assert_eq!(c.n_theta, 64);
    }
}
