//! File artifacts: trajectory and profile CSVs, correlation grids, manifests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atom::Level;
use crate::correlations::CorrelationGrid;
use crate::dynamics::{PhotonRecord, Trajectory};
use crate::ode::Tolerances;
use crate::operators::CavityModeConfig;
use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// sha256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn pop_label(level: Level) -> String {
    let sign = if level.two_m > 0 { "+" } else { "-" };
    format!("pop_{}{}{}_2", level.term.label(), sign, level.two_m.unsigned_abs())
}

/// Writes `t_us, pop_<level>…, n_<mode>…, flux_per_us`.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["t_us".to_string()];
    header.extend(Level::ALL.iter().map(|l| pop_label(*l)));
    header.extend(traj.mode_polarizations.iter().map(|q| format!("n_{}", q.label())));
    header.push("flux_per_us".into());
    writeln!(w, "{}", header.join(","))?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = vec![format!("{t:e}")];
        row.extend(traj.populations[k].iter().map(|v| format!("{v:e}")));
        row.extend(traj.photon_numbers[k].iter().map(|v| format!("{v:e}")));
        row.push(format!("{:e}", traj.flux[k]));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the normalized temporal profile as `t_us, probability_density_per_us`.
pub fn write_profile_csv(times: &[f64], profile: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t_us,probability_density_per_us")?;
    for (t, p) in times.iter().zip(profile) {
        writeln!(w, "{t:e},{p:e}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhotonSummary {
    pub p_emit: f64,
    pub integrated_flux: f64,
    pub final_populations: Vec<(String, f64)>,
    pub max_trace_drift: f64,
    pub max_hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
}

impl PhotonSummary {
    pub fn from_record(rec: &PhotonRecord) -> Self {
        let t = &rec.trajectory;
        PhotonSummary {
            p_emit: rec.p_emit,
            integrated_flux: t.integrated_flux,
            final_populations: Level::ALL
                .iter()
                .zip(rec.final_populations.iter())
                .map(|(l, p)| (l.label(), *p))
                .collect(),
            max_trace_drift: t.trace_drift,
            max_hermiticity_residual: t.max_hermiticity_residual,
            min_eigenvalue: t.min_eigenvalue,
            steps: t.step_stats.accepted,
        }
    }
}

/// Writes G1 (re/im), G2 and n(t) in long format
/// `i, j, t1_us, t2_us, g1_re, g1_im, g2` plus a JSON sidecar.
pub fn write_grid_csv(grid: &CorrelationGrid, cavity: &CavityModeConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i,j,t1_us,t2_us,g1_re,g1_im,g2")?;
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let g1 = grid.g1[(i, j)];
            let g2 = grid.g2.as_ref().map(|m| format!("{:e}", m[(i, j)])).unwrap_or_default();
            writeln!(
                w,
                "{i},{j},{:e},{:e},{:e},{:e},{g2}",
                grid.times[i], grid.times[j], g1.re, g1.im
            )?;
        }
    }
    w.flush()?;
    let meta = serde_json::json!({
        "n_points": grid.len(),
        "t0_us": grid.times.first(),
        "t1_us": grid.times.last(),
        "kappa_rad_per_us": cavity.kappa,
        "outcoupling_fraction": cavity.outcoupling_fraction,
        "has_g2": grid.g2.is_some(),
        "n_of_t": grid.n_of_t,
    });
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    pub tolerances: Option<Tolerances>,
    /// Free-form notes such as applied calibrations.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_scheme, SchemeConfig};
    use crate::operators::Scheme;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SchemeConfig::paper_defaults(Scheme::SD);
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.params.b_gauss = 5.5;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn trajectory_header() {
        let mut cfg = SchemeConfig::paper_defaults(Scheme::SD);
        cfg.grid.n_points = 16;
        let rec = run_scheme(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory_csv(&rec.trajectory, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t_us,pop_S-1_2,pop_S+1_2,pop_P-1_2"));
        assert!(header.ends_with("n_sigma_plus,n_sigma_minus,flux_per_us"));
        assert_eq!(text.lines().count(), 17);
    }
}
