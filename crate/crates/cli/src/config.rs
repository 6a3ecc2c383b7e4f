use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rosenblatt::domain::Grading;
use rosenblatt::hurst::{profile_extrema, HurstPair, HurstProfile, ProfileShape};
use rosenblatt::kernel::{choose_truncation_with, DEFAULT_MATRIX_TOL};
use rosenblatt::suite::SuiteConfig;
use rosenblatt::TruncatedDomain;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    /// Left truncation point L; when absent it is chosen from the tail ratio.
    pub left_cut: Option<f64>,
    pub truncation_tol: f64,
    pub cells: usize,
    pub grading: Grading,
    pub refinement: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            left_cut: Some(65536.0),
            truncation_tol: 1e-3,
            cells: 512,
            grading: Grading::Graded,
            refinement: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub samples: usize,
    /// Dyadic grid with 2^time_levels + 1 points, unless `times` is given.
    pub time_levels: u32,
    pub times: Option<Vec<f64>>,
    pub matrix_tol: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            time_levels: 6,
            times: None,
            matrix_tol: DEFAULT_MATRIX_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Time of the spectrum; defaults to the horizon.
    pub spectrum_time: Option<f64>,
    pub rank: Option<usize>,
    pub nondegeneracy_threshold: f64,
    /// CF trace on this many points of [-half_width, half_width] / sigma.
    pub cf_points: usize,
    pub cf_half_width: f64,
    pub berman_levels: i32,
    /// Histogram bin widths are range * 2^-level.
    pub bin_levels: Vec<i32>,
    pub localtime_paths: usize,
    pub localtime_levels: u32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            spectrum_time: None,
            rank: None,
            nondegeneracy_threshold: 1e-4,
            cf_points: 41,
            cf_half_width: 5.0,
            berman_levels: 7,
            bin_levels: vec![4, 5, 6],
            localtime_paths: 200,
            localtime_levels: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Run the small preset; `--quick` sets it too.
    pub quick: bool,
    pub profile: HurstProfile,
    pub domain: DomainSection,
    pub simulation: SimulationSection,
    pub analysis: AnalysisSection,
    pub suite: SuiteConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pair = HurstPair::new(0.6, 0.8).expect("valid default pair");
        Self {
            seed: 20240607,
            output: PathBuf::from("out"),
            quick: false,
            profile: HurstProfile::constant(pair, 1.0, 0.99),
            domain: DomainSection::default(),
            simulation: SimulationSection::default(),
            analysis: AnalysisSection::default(),
            suite: SuiteConfig::default(),
        }
    }
}

/// Sizes applied by `--quick` outside the suite.
const QUICK_SAMPLES: usize = 200;
const QUICK_CELLS: usize = 256;
const QUICK_LOCALTIME_PATHS: usize = 20;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies command-line overrides and the quick preset. The result is what
    /// gets hashed.
    pub fn effective(mut self, seed: Option<u64>, quick: bool) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.quick |= quick;
        if self.quick {
            self.simulation.samples = self.simulation.samples.min(QUICK_SAMPLES);
            self.domain.cells = self.domain.cells.min(QUICK_CELLS);
            self.analysis.localtime_paths = self.analysis.localtime_paths.min(QUICK_LOCALTIME_PATHS);
            self.suite = SuiteConfig::quick();
        }
        self.suite.seed = self.seed;
        self
    }

    /// SHA-256 of the JSON form; floats are written in round-trip form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Pair used for the truncation choice: the largest H in each coordinate,
    /// whose kernel has the heaviest tail.
    pub fn heaviest_pair(&self) -> Result<HurstPair> {
        if matches!(self.profile.shape, ProfileShape::Constant) {
            return Ok(self.profile.base_pair()?);
        }
        let e = profile_extrema(&self.profile);
        Ok(HurstPair::new(e.max_h1, e.max_h2)?)
    }

    pub fn left_cut(&self) -> Result<f64> {
        match self.domain.left_cut {
            Some(l) => Ok(l),
            None => {
                let pair = self.heaviest_pair()?;
                let report = choose_truncation_with(
                    &pair,
                    self.profile.horizon,
                    self.domain.truncation_tol,
                    self.domain.cells,
                )?;
                Ok(report.left_cut)
            }
        }
    }

    pub fn build_domain(&self) -> Result<TruncatedDomain> {
        let d = &self.domain;
        Ok(TruncatedDomain::new(
            self.left_cut()?,
            self.profile.horizon,
            d.cells,
            d.grading,
            d.refinement,
        )?)
    }

    pub fn times(&self) -> Vec<f64> {
        match &self.simulation.times {
            Some(t) => t.clone(),
            None => rosenblatt::paths::dyadic_grid(self.profile.horizon, self.simulation.time_levels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_a_location() {
        let e = ExperimentConfig::parse("seed = 1\n[profile\nh1 = 0.6\n").unwrap_err();
        assert!(format!("{e:#}").contains("line 2"), "{e:#}");
        assert!(ExperimentConfig::parse("sede = 1\n").is_err());
    }

    #[test]
    fn overrides_change_the_hash() {
        let c = ExperimentConfig::default();
        let a = c.clone().effective(None, false);
        let b = c.clone().effective(Some(7), false);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), c.clone().effective(None, false).hash());
        let q = c.effective(None, true);
        assert!(q.simulation.samples <= QUICK_SAMPLES && q.suite.samples < 10_000);
        assert_eq!(q.suite.seed, q.seed);
    }

    #[test]
    fn affine_profile_section_parses() {
        let text = "[profile]\nkind = \"affine\"\nslope1 = 0.1\nslope2 = 0.0\nh1 = 0.6\nh2 = 0.8\nhorizon = 1.0\ngamma = 0.9\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.profile, HurstProfile::affine(0.6, 0.1, 0.8, 0.0, 1.0, 0.9));
        assert!((c.heaviest_pair().unwrap().h1() - 0.7).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn toml_round_trip_keeps_the_hash(seed in proptest::prelude::any::<u64>(), samples in 0usize..100_000, quick: bool) {
            let simulation = SimulationSection { samples, ..SimulationSection::default() };
            let c = ExperimentConfig { seed, simulation, ..ExperimentConfig::default() }.effective(None, quick);
            let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
            proptest::prop_assert_eq!(back.hash(), c.hash());
        }
    }
}
