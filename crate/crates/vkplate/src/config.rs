//! Run configuration: flat `key = value` text grouped by `[section]`
//! headers. Every key has a default, unknown keys are rejected, and
//! command-line flags override file values.

use std::path::{Path, PathBuf};

use crate::continuation::BranchSeed;
use crate::error::{Result, VkError};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // [mesh]
    pub l: f64,
    pub nx: usize,
    pub ny: usize,
    pub degree: usize,
    // [sweep]
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub d_lambda: f64,
    pub psi: f64,
    pub psi_grid: Vec<f64>,
    pub seeds: Vec<BranchSeed>,
    pub delta: f64,
    // [solver]
    pub newton_tol: f64,
    pub max_iter: usize,
    // [eigs]
    pub k: usize,
    // [rom]
    pub n_max: usize,
    pub energy_tol: f64,
    pub snapshot_stride: usize,
    pub test_points: usize,
    // [output]
    pub out_dir: PathBuf,
    /// Salt for the eigensolver's starting subspace; results are
    /// salt-independent, iteration paths reproducible.
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            l: 1.0,
            nx: 20,
            ny: 20,
            degree: 2,
            lambda_start: 35.0,
            lambda_end: 65.0,
            d_lambda: 0.5,
            psi: 0.0,
            psi_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            seeds: vec![
                BranchSeed::new(1, 1, 1),
                BranchSeed::new(1, 1, -1),
                BranchSeed::new(2, 1, 1),
                BranchSeed::new(2, 1, -1),
            ],
            delta: 1e-4,
            newton_tol: 1e-10,
            max_iter: 20,
            k: 3,
            n_max: 8,
            energy_tol: 1e-8,
            snapshot_stride: 1,
            test_points: 20,
            out_dir: PathBuf::from("out"),
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    /// Defaults, then file values, then the `VKPLATE_OUT` environment
    /// override for the output directory. Flags are merged by the caller
    /// afterwards, giving flags > env > file > defaults.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| {
                VkError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        if let Ok(dir) = std::env::var("VKPLATE_OUT") {
            if !dir.is_empty() {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(VkError::Config(format!(
                        "line {}: unknown section [{section}]",
                        no + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VkError::Config(format!("line {}: expected key = value, got {line:?}", no + 1))
            })?;
            self.set(&section, key.trim(), value.trim()).map_err(|e| {
                let msg = match e {
                    VkError::Config(m) => m,
                    other => other.to_string(),
                };
                VkError::Config(format!("line {}: {msg}", no + 1))
            })?;
        }
        Ok(())
    }

    /// Sets one key; the section qualifies the key as in the file format.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let fail = |e: String| VkError::Config(e);
        let bad = |what: &str| fail(format!("invalid {what} value {value:?}"));
        match (section, key) {
            ("mesh", "l") => self.l = parse_f64(value).ok_or_else(|| bad("l"))?,
            ("mesh", "nx") => self.nx = parse_usize(value).ok_or_else(|| bad("nx"))?,
            ("mesh", "ny") => self.ny = parse_usize(value).ok_or_else(|| bad("ny"))?,
            ("mesh", "degree") => self.degree = parse_usize(value).ok_or_else(|| bad("degree"))?,
            ("sweep", "lambda_start") => {
                self.lambda_start = parse_f64(value).ok_or_else(|| bad("lambda_start"))?
            }
            ("sweep", "lambda_end") => {
                self.lambda_end = parse_f64(value).ok_or_else(|| bad("lambda_end"))?
            }
            ("sweep", "d_lambda") => {
                self.d_lambda = parse_f64(value).ok_or_else(|| bad("d_lambda"))?
            }
            ("sweep", "psi") => self.psi = parse_f64(value).ok_or_else(|| bad("psi"))?,
            ("sweep", "psi_grid") => self.psi_grid = parse_f64_list(value)?,
            ("sweep", "seeds") => self.seeds = parse_seeds(value)?,
            ("sweep", "delta") => self.delta = parse_f64(value).ok_or_else(|| bad("delta"))?,
            ("solver", "newton_tol") => {
                self.newton_tol = parse_f64(value).ok_or_else(|| bad("newton_tol"))?
            }
            ("solver", "max_iter") => {
                self.max_iter = parse_usize(value).ok_or_else(|| bad("max_iter"))?
            }
            ("eigs", "k") => self.k = parse_usize(value).ok_or_else(|| bad("k"))?,
            ("rom", "n_max") => self.n_max = parse_usize(value).ok_or_else(|| bad("n_max"))?,
            ("rom", "energy_tol") => {
                self.energy_tol = parse_f64(value).ok_or_else(|| bad("energy_tol"))?
            }
            ("rom", "snapshot_stride") => {
                self.snapshot_stride = parse_usize(value).ok_or_else(|| bad("snapshot_stride"))?
            }
            ("rom", "test_points") => {
                self.test_points = parse_usize(value).ok_or_else(|| bad("test_points"))?
            }
            ("output", "dir") => self.out_dir = PathBuf::from(value),
            ("output", "rng_seed") => {
                self.rng_seed = value.parse().map_err(|_| bad("rng_seed"))?
            }
            _ => {
                return Err(fail(if section.is_empty() {
                    format!("key {key:?} appears before any [section] header")
                } else {
                    format!("unknown key {key:?} in section [{section}]")
                }))
            }
        }
        Ok(())
    }

    /// λ grid implied by the sweep range, as used by spectrum and tracing.
    pub fn lambda_range(&self) -> (f64, f64) {
        (self.lambda_start, self.lambda_end)
    }
}

const SECTIONS: [&str; 6] = ["mesh", "sweep", "solver", "eigs", "rom", "output"];

fn parse_f64(value: &str) -> Option<f64> {
    value.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_usize(value: &str) -> Option<usize> {
    value.parse().ok()
}

fn parse_f64_list(value: &str) -> Result<Vec<f64>> {
    value
        .split_whitespace()
        .map(|tok| {
            parse_f64(tok)
                .ok_or_else(|| VkError::Config(format!("invalid number {tok:?} in list")))
        })
        .collect()
}

/// Seed list format: whitespace-separated `m:n:+` / `m:n:-` triples; the
/// empty string is the empty list (trivial branch only).
pub fn parse_seeds(value: &str) -> Result<Vec<BranchSeed>> {
    value.split_whitespace().map(parse_seed).collect()
}

pub fn parse_seed(tok: &str) -> Result<BranchSeed> {
    let bad = || VkError::Config(format!("seed {tok:?} is not of the form m:n:+ or m:n:-"));
    let mut parts = tok.split(':');
    let m: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let n: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let sign = match parts.next() {
        Some("+") => 1,
        Some("-") => -1,
        _ => return Err(bad()),
    };
    if parts.next().is_some() || m == 0 || n == 0 {
        return Err(bad());
    }
    Ok(BranchSeed::new(m, n, sign))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_file_then_env() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.ny, 20);
        cfg.apply_text(
            "# comment\n\
             [mesh]\n\
             ny = 12   # trailing comment\n\
             degree = 1\n\
             [sweep]\n\
             seeds = 1:1:+ 2:1:-\n\
             psi_grid = 0 0.5 1\n\
             [output]\n\
             dir = results\n\
             rng_seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.ny, 12);
        assert_eq!(cfg.degree, 1);
        assert_eq!(cfg.nx, 20);
        assert_eq!(cfg.seeds.len(), 2);
        assert_eq!(cfg.seeds[1].mode, (2, 1));
        assert_eq!(cfg.seeds[1].sign, -1);
        assert_eq!(cfg.psi_grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
        assert_eq!(cfg.rng_seed, 7);
    }

    #[test]
    fn unknown_keys_sections_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(
            cfg.apply_text("[mesh]\nnz = 3\n"),
            Err(VkError::Config(_))
        ));
        assert!(matches!(
            cfg.apply_text("[grid]\nnx = 3\n"),
            Err(VkError::Config(_))
        ));
        assert!(matches!(cfg.apply_text("nx = 3\n"), Err(VkError::Config(_))));
        assert!(matches!(
            cfg.apply_text("[mesh]\nnx = many\n"),
            Err(VkError::Config(_))
        ));
        assert!(matches!(
            cfg.apply_text("[sweep]\nseeds = 1:0:+\n"),
            Err(VkError::Config(_))
        ));
        assert!(matches!(
            cfg.apply_text("[sweep]\nseeds = 1:1:x\n"),
            Err(VkError::Config(_))
        ));
        assert!(matches!(
            cfg.apply_text("[mesh]\njust a line\n"),
            Err(VkError::Config(_))
        ));
    }

    #[test]
    fn empty_seed_list_is_allowed() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("[sweep]\nseeds =\n").unwrap();
        assert!(cfg.seeds.is_empty());
    }
}
