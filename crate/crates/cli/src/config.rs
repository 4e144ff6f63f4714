//! Run configuration.
//!
//! TOML by default; a file ending in `.json` is read as JSON with the same
//! schema. Unknown keys are rejected. See `configs/synthetic.toml` for a
//! complete example.

use std::path::{Path, PathBuf};

use fieldnet::basis::BasisConfig;
use fieldnet::{
    BasisSet, CovarianceFn, DriftCoefficients, GlassoOptions, Grid, PenaltyWeights, ResponseConvention, SolverConfig,
    Stimulus, TensorD,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: Grid,
    #[serde(default)]
    pub basis: BasisConfig,
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub glasso: GlassoOptions,
    #[serde(default)]
    pub summary: SummarySection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub noise: CovarianceFn,
    /// DTA file with the L+1 history frames; zeros when absent.
    pub history: Option<PathBuf>,
    #[serde(default)]
    pub truth: TruthSection,
}

/// Ground-truth coefficients. Indices are 1-based, in the order of the
/// coefficient arrays: stimulus `[i, j, k]`, network `[q1, .., q5]`,
/// memory `[i, j]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    /// Value of every memory coefficient not listed in `memory`.
    pub memory_fill: f64,
    pub memory: Vec<Entry>,
    pub network: Vec<Entry>,
    pub stimulus: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub index: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverSection {
    #[serde(flatten)]
    pub path: SolverConfig,
    pub response: ResponseConvention,
    /// Re-fit with the estimated noise precision.
    pub mrce: bool,
    /// Path index whose residuals feed the precision estimate; the path
    /// midpoint when absent.
    pub lambda_index: Option<usize>,
    /// Explicit λ values instead of the log-spaced path.
    pub lambdas: Option<Vec<f64>>,
}

// serde's flatten does not combine with deny_unknown_fields, so split the
// table by hand and let SolverConfig reject what is left over.
impl<'de> Deserialize<'de> for SolverSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
        fn take<T: serde::de::DeserializeOwned, E: Error>(
            table: &mut serde_json::Map<String, serde_json::Value>,
            key: &str,
        ) -> Result<Option<T>, E> {
            table.remove(key).filter(|v| !v.is_null()).map(serde_json::from_value).transpose().map_err(|e| E::custom(format!("{key}: {e}")))
        }
        let response = take(&mut table, "response")?.unwrap_or_default();
        let mrce = take(&mut table, "mrce")?.unwrap_or_default();
        let lambda_index = take(&mut table, "lambda_index")?;
        let lambdas = take(&mut table, "lambdas")?;
        let path = serde_json::from_value(table.into()).map_err(D::Error::custom)?;
        Ok(Self { path, response, mrce, lambda_index, lambdas })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    /// Graphical-lasso penalty.
    pub nu: f64,
    pub stimulus_weight: f64,
    pub network_weight: f64,
    pub memory_weight: f64,
    pub temporal_downweight: Option<Downweight>,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self { nu: 0.01, stimulus_weight: 1.0, network_weight: 1.0, memory_weight: 1.0, temporal_downweight: None }
    }
}

/// Scale the stimulus weights of temporal basis functions overlapping
/// `[e, e + window]` for any event time `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Downweight {
    pub events: Vec<f64>,
    pub window: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarySection {
    /// Separations for W(s, t); 0 to the grid diagonal in steps of the
    /// smaller cell side when absent.
    pub radii: Option<Vec<f64>>,
    /// Delays for W(s, t); the lag nodes when absent.
    pub delays: Option<Vec<f64>>,
    pub n_theta: usize,
    /// Delay bin edges of the weight histogram; one bin per lag node when
    /// absent.
    pub delay_edges: Option<Vec<f64>>,
    pub value_bins: usize,
    /// Support threshold; `1e-8 max|w|` when absent.
    pub epsilon: Option<f64>,
}

impl Default for SummarySection {
    fn default() -> Self {
        Self { radii: None, delays: None, n_theta: 64, delay_edges: None, value_bins: 20, epsilon: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    /// Input data for `fit`; `--data` takes precedence.
    pub data: Option<PathBuf>,
}

/// A parsed configuration together with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::usage(format!("{}: not UTF-8", path.display())))?;
    let config = parse(&text, path.extension().is_some_and(|e| e == "json"))
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    config.validate().map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig { config, path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

pub fn parse(text: &str, json: bool) -> Result<RunConfig, String> {
    if json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

impl RunConfig {
    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<(), String> {
        let basis = self.basis_set()?;
        SolverConfig::validate(&self.solver.path).map_err(|e| format!("[solver] {e}"))?;
        if let Some(l) = &self.solver.lambdas {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err("[solver] lambdas must be a non-empty list of non-negative numbers".into());
            }
        }
        let n_fits = self.n_fits();
        if let Some(i) = self.solver.lambda_index {
            if i >= n_fits {
                return Err(format!("[solver] lambda_index {i} outside a path of {n_fits}"));
            }
        }
        let p = &self.penalty;
        if !(p.nu >= 0.0) {
            return Err("[penalty] nu must be non-negative".into());
        }
        for (name, w) in [("stimulus_weight", p.stimulus_weight), ("network_weight", p.network_weight), ("memory_weight", p.memory_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("[penalty] {name} must be finite and non-negative"));
            }
        }
        self.penalty_weights(&basis)?;
        if self.summary.n_theta == 0 || self.summary.value_bins == 0 {
            return Err("[summary] n_theta and value_bins must be positive".into());
        }
        if let Some(sim) = &self.simulate {
            sim.noise.validate().map_err(|e| format!("[simulate.noise] {e}"))?;
            self.truth(&basis)?;
        }
        Ok(())
    }

    pub fn n_fits(&self) -> usize {
        self.solver.lambdas.as_ref().map_or(self.solver.path.n_lambda, |l| l.len())
    }

    pub fn basis_set(&self) -> Result<BasisSet, String> {
        self.grid.validate().map_err(|e| format!("[grid] {e}"))?;
        BasisSet::build(&self.grid, &self.basis).map_err(|e| format!("[basis] {e}"))
    }

    pub fn penalty_weights(&self, basis: &BasisSet) -> Result<PenaltyWeights, String> {
        let p = &self.penalty;
        let mut w = PenaltyWeights::uniform(&basis.dims());
        w.stimulus.scale(p.stimulus_weight);
        w.network.scale(p.network_weight);
        w.memory.scale(p.memory_weight);
        if let Some(d) = &p.temporal_downweight {
            w.downweight_after_events(basis, &d.events, d.window, d.factor)
                .map_err(|e| format!("[penalty.temporal_downweight] {e}"))?;
        }
        Ok(w)
    }

    /// Ground truth from the `simulate.truth` section, or `None` without a
    /// simulate section.
    pub fn truth(&self, basis: &BasisSet) -> Result<Option<DriftCoefficients>, String> {
        let Some(sim) = &self.simulate else {
            return Ok(None);
        };
        let t = &sim.truth;
        let dims = basis.dims();
        let mut memory = TensorD::filled(&dims.memory_shape(), t.memory_fill);
        let mut network = TensorD::zeros(&dims.network_shape());
        let mut stimulus = TensorD::zeros(&dims.stimulus_shape());
        for (name, entries, target) in [
            ("memory", &t.memory, &mut memory),
            ("network", &t.network, &mut network),
            ("stimulus", &t.stimulus, &mut stimulus),
        ] {
            for e in entries {
                let shape = target.shape().to_vec();
                let zero_based: Option<Vec<usize>> = e.index.iter().map(|i| i.checked_sub(1)).collect();
                let ok = zero_based.as_ref().is_some_and(|ix| ix.len() == shape.len() && ix.iter().zip(&shape).all(|(i, n)| i < n));
                if !ok || !e.value.is_finite() {
                    return Err(format!(
                        "[simulate.truth] {name} entry {:?} must be a finite value at a 1-based index within {shape:?}",
                        e.index
                    ));
                }
                target.set(&zero_based.unwrap(), e.value).map_err(|e| e.to_string())?;
            }
        }
        Ok(Some(DriftCoefficients { stimulus: Stimulus::Full(stimulus), network, memory }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [grid]
        nx = 3
        ny = 2
        x_range = [0.0, 3.0]
        y_range = [0.0, 2.0]
        time_step = 0.5
        lags = 2
        steps = 10

        [basis]
        px = 2
        py = 2
        pt = 2
        pl = 1
        spatial_degree = 1
        temporal_degree = 1
        lag_degree = 0
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(MINIMAL, false).unwrap();
        c.validate().unwrap();
        assert_eq!(c.solver.path, SolverConfig::default());
        assert_eq!(c.summary.n_theta, 64);
        assert!(c.simulate.is_none());
        assert_eq!(c.n_fits(), 10);
    }

    #[test]
    fn json_encodes_the_same_schema() {
        let c = parse(MINIMAL, false).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(parse(&json, true).unwrap(), c);
    }

    #[test]
    fn missing_grid_is_reported() {
        let err = parse("[basis]\npx = 2\n", false).unwrap_err();
        assert!(err.contains("grid"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = format!("{MINIMAL}\n[solver]\ntol_innr = 1e-3\n");
        let err = parse(&text, false).unwrap_err();
        assert!(err.contains("tol_innr") && err.contains("line"), "{err}");
    }

    #[test]
    fn truth_indices_are_one_based_and_checked() {
        let text = format!(
            "{MINIMAL}\n[simulate]\nnoise = {{ kind = \"white\", variance = 1.0 }}\n[simulate.truth]\nmemory_fill = -0.5\nnetwork = [{{ index = [2, 1, 1, 2, 1], value = 0.3 }}]\n"
        );
        let c = parse(&text, false).unwrap();
        let basis = c.basis_set().unwrap();
        let truth = c.truth(&basis).unwrap().unwrap();
        assert_eq!(truth.network.get(&[1, 0, 0, 1, 0]).unwrap(), 0.3);
        assert_eq!(truth.network.count_nonzero(), 1);
        assert!(truth.memory.data().iter().all(|v| *v == -0.5));

        let bad = text.replace("[2, 1, 1, 2, 1]", "[0, 1, 1, 2, 1]");
        assert!(parse(&bad, false).unwrap().validate().is_err());
        let bad = text.replace("[2, 1, 1, 2, 1]", "[3, 1, 1, 2, 1]");
        assert!(parse(&bad, false).unwrap().validate().is_err());
    }

    #[test]
    fn inconsistent_basis_is_rejected() {
        let text = MINIMAL.replace("spatial_degree = 1", "spatial_degree = 3");
        let err = parse(&text, false).unwrap().validate().unwrap_err();
        assert!(err.starts_with("[basis]"), "{err}");
    }
}
