//! Scenario config files, result tables (CSV and JSON) and MovieLens ingest.

mod movielens;
mod reports;
mod table;

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::ScenarioConfig;

pub use movielens::{
    alpha_from_mean_rating, load_movielens, parse_udata_line, IngestMode, IngestReport, MovieLensData, MovieLensRecord,
    UserSummary, BETA_HI, BETA_LO,
};
pub use reports::{clearing_table, regret_table, shock_table, statics_table, sweep_table};
pub use table::{read_results, render_number, Cell, Format, ResultTable, SCHEMA_VERSION};

/// Parses a TOML scenario. Omitted keys take their defaults; unknown keys,
/// type mismatches and invariant violations fail with the key path.
pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        key: "<document>".into(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::Config {
            key: if key == "." { "<document>".into() } else { key },
            message: e.into_inner().message().trim_end().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_scenario_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario_str(&text)
}

/// Canonical TOML rendering; re-parsing it yields an identical config.
pub fn to_canonical_toml(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config {
        key: "<document>".into(),
        message: e.to_string(),
    })
}

/// SHA-256 of the canonical rendering, hex encoded.
pub fn config_digest(cfg: &ScenarioConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_canonical_toml(cfg)?.as_bytes())))
}

/// Writes `bytes` through a temporary file in the target directory and
/// renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::FeeSpec;
    use crate::mechanisms::MechanismChoice;

    #[test]
    fn overrides_fill_defaults() {
        let cfg = parse_scenario_str("[contract]\ntau = [0, 0.5, 1.0]\n").unwrap();
        assert_eq!(cfg.contract.tau, FeeSpec::Grid(vec![0.0, 0.5, 1.0]));
        assert_eq!(cfg.population.n, 20);
        assert_eq!(cfg.contract.capacity, 100.0);
        assert_eq!(cfg.experiment.replications, 1000);
        assert_eq!(parse_scenario_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn errors_name_the_key() {
        let key = |text: &str| match parse_scenario_str(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(key("[contract]\ntau = -1\n"), "contract.tau");
        assert_eq!(key("[population]\nsize = 3\n"), "population.size");
        assert_eq!(
            key("[population.alpha]\nlo = \"five\"\nhi = 20\n"),
            "population.alpha.lo"
        );
        assert_eq!(key("[algo]\ngamma = 0\n"), "algo.gamma");
        assert!(key("[experiment]\nmechanisms = [\"auction\"]\n").starts_with("experiment.mechanisms"));
        assert!(key("[[population]]\n").starts_with("population"));
        assert_eq!(key("not toml"), "<document>");
    }

    #[test]
    fn canonical_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.contract.g = FeeSpec::Grid(vec![0.0, 2.5]);
        cfg.experiment.mechanisms = vec![MechanismChoice::FlatContract(Some(0.3)), MechanismChoice::Proportional];
        cfg.experiment.regret.period = Some(500.0);
        cfg.algo.tol_primal = Some(1e-7);
        cfg.population.n = 2;
        cfg.population.agents = Some(vec![crate::experiments::AgentSpec { alpha: 10.0, beta: 1.0 }; 2]);
        for c in [ScenarioConfig::default(), cfg] {
            let text = to_canonical_toml(&c).unwrap();
            let back = parse_scenario_str(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(to_canonical_toml(&back).unwrap(), text);
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.experiment.master_seed = 7;
        assert_eq!(config_digest(&a).unwrap(), config_digest(&a.clone()).unwrap());
        assert_ne!(config_digest(&a).unwrap(), config_digest(&b).unwrap());
        assert_eq!(config_digest(&a).unwrap().len(), 64);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_scenario_config("/nonexistent/scenario.toml").unwrap_err();
        assert!(!err.is_validation());
    }
}
