//! Study configuration and command implementations behind the `plf` binary.
//!
//! A study is one TOML document naming a network case, the target buses, the
//! uncertain injections (in the case's MW/MVAr units; everything is converted
//! to per-unit net injections at ingestion), the learning tolerances and the
//! test-phase input distribution. Each subcommand consumes the same document
//! so studies stay declarative and reproducible.

// validation comparisons are written `!(x > y)` so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use plf_core::acpf::{DimensionMap, Quantity};
use plf_core::case::{parse_case, BusId, NetworkCase};
use plf_core::learn::{self, derive_seed, BetaSchedule, LearnResult, UncertainBox};
use plf_core::testing::{self, DistKind, InputDistribution, TestReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Raw study document as written by the user.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Path to the case file, relative to the config file's directory.
    pub case: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 keeps the library default.
    #[serde(default)]
    pub jobs: usize,
    pub delta: f64,
    /// Learning tolerance with a unit tag: `"1%"`, `"0.01pu"` or `"1.35kV"`.
    pub xi_tol: String,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_mcs_n")]
    pub mcs_n: usize,
    /// Histogram bin override; 0 selects Freedman-Diaconis.
    #[serde(default)]
    pub hist_bins: usize,
    /// Also report the surrogate's predictive standard deviation in `test`.
    #[serde(default)]
    pub predictive_std: bool,
    pub targets: Vec<TargetConfig>,
    pub uncertain: Vec<UncertainConfig>,
    #[serde(default)]
    pub test_dist: Option<DistConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_budget() -> usize {
    60
}
fn default_mcs_n() -> usize {
    50_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub bus: BusId,
}

/// How an uncertain quantity enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// The value replaces all generation at the bus.
    Generation,
    /// The value replaces the demand at the bus.
    Load,
    /// The value is the net injection itself.
    Injection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertainConfig {
    pub bus: BusId,
    pub quantity: Quantity,
    pub kind: SourceKind,
    /// Bounds in MW (active) or MVAr (reactive).
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    /// `uniform`, `normal`, `gamma` or `empirical`.
    pub kind: String,
    /// Clip samples to the learning box by rejection (default on, so test
    /// inputs stay where the surrogate is valid).
    #[serde(default = "default_truncate")]
    pub truncate: bool,
    #[serde(default)]
    pub mean: Vec<f64>,
    #[serde(default)]
    pub std: Vec<f64>,
    #[serde(default)]
    pub shape: Vec<f64>,
    #[serde(default)]
    pub scale: Vec<f64>,
    #[serde(default)]
    pub offset: Vec<f64>,
    #[serde(default)]
    pub samples: Vec<Vec<f64>>,
    #[serde(default)]
    pub samples_csv: Option<PathBuf>,
}

fn default_truncate() -> bool {
    true
}

/// Affine map from a source-side value (MW/MVAr) to a per-unit net injection.
#[derive(Debug, Clone, Copy)]
struct NetMap {
    sign: f64,
    shift_mw: f64,
    base: f64,
}

impl NetMap {
    fn apply(&self, value_mw: f64) -> f64 {
        (self.sign * value_mw + self.shift_mw) / self.base
    }
}

/// A config resolved against its parsed case: everything per-unit, validated.
#[derive(Debug)]
pub struct Study {
    pub config_dir: PathBuf,
    pub case: NetworkCase,
    pub targets: Vec<BusId>,
    pub bounds: UncertainBox,
    pub delta: f64,
    pub budget: usize,
    pub seed: u64,
    pub jobs: usize,
    pub mcs_n: usize,
    pub hist_bins: Option<usize>,
    pub predictive_std: bool,
    xi_tol: XiTolerance,
    net_maps: Vec<NetMap>,
    dist_config: Option<DistConfig>,
}

#[derive(Debug, Clone, Copy)]
enum XiTolerance {
    PerUnit(f64),
    PercentOfNominal(f64),
    Kilovolt(f64),
}

impl XiTolerance {
    fn parse(text: &str) -> Result<XiTolerance> {
        let t = text.trim();
        let (value, unit) = if let Some(v) = t.strip_suffix('%') {
            (v, "%")
        } else if let Some(v) = t.strip_suffix("pu") {
            (v, "pu")
        } else if let Some(v) = t.strip_suffix("kV") {
            (v, "kV")
        } else {
            bail!("xi_tol `{t}` needs a unit suffix: %, pu or kV");
        };
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("xi_tol `{t}` has a non-numeric value"))?;
        if !(value > 0.0) {
            bail!("xi_tol must be positive, got `{t}`");
        }
        Ok(match unit {
            "%" => XiTolerance::PercentOfNominal(value),
            "pu" => XiTolerance::PerUnit(value),
            _ => XiTolerance::Kilovolt(value),
        })
    }

    /// Per-unit tolerance for a target on a given voltage base.
    fn per_unit(&self, base_kv: f64) -> f64 {
        match self {
            XiTolerance::PerUnit(v) => *v,
            XiTolerance::PercentOfNominal(v) => v / 100.0,
            XiTolerance::Kilovolt(v) => v / base_kv,
        }
    }
}

pub fn load_config(path: &Path) -> Result<StudyConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Validate a config against its case and convert everything to per-unit.
pub fn resolve(config: StudyConfig, config_dir: &Path) -> Result<Study> {
    let case_path = config_dir.join(&config.case);
    let case_text = fs::read_to_string(&case_path)
        .with_context(|| format!("cannot read case file {}", case_path.display()))?;
    let case = parse_case(&case_text)
        .map_err(|e| anyhow!("case file {}: {e}", case_path.display()))?;

    if config.targets.is_empty() {
        bail!("field `targets`: at least one target bus is required");
    }
    for t in &config.targets {
        if case.bus_index(t.bus).is_none() {
            bail!("field `targets`: bus {} does not exist in the case", t.bus);
        }
    }
    if config.uncertain.is_empty() {
        bail!("field `uncertain`: at least one uncertain dimension is required");
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        bail!("field `delta`: must lie in (0, 1), got {}", config.delta);
    }
    if config.mcs_n == 0 {
        bail!("field `mcs_n`: must be at least 1");
    }
    let xi_tol = XiTolerance::parse(&config.xi_tol).context("field `xi_tol`")?;

    let base = case.base_mva();
    let mut dims = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut net_maps = Vec::new();
    for (k, u) in config.uncertain.iter().enumerate() {
        let idx = case
            .bus_index(u.bus)
            .ok_or_else(|| anyhow!("field `uncertain[{k}]`: bus {} does not exist", u.bus))?;
        if !(u.min < u.max) {
            bail!(
                "field `uncertain[{k}]`: min {} must be below max {}",
                u.min,
                u.max
            );
        }
        let bus = &case.buses()[idx];
        let fixed_gen: f64 = case
            .gens()
            .iter()
            .filter(|g| g.status && g.bus == u.bus)
            .map(|g| match u.quantity {
                Quantity::Active => g.pg,
                Quantity::Reactive => g.qg,
            })
            .sum();
        let demand = match u.quantity {
            Quantity::Active => bus.pd,
            Quantity::Reactive => bus.qd,
        };
        let map = match u.kind {
            SourceKind::Generation => NetMap {
                sign: 1.0,
                shift_mw: -demand,
                base,
            },
            SourceKind::Load => NetMap {
                sign: -1.0,
                shift_mw: fixed_gen,
                base,
            },
            SourceKind::Injection => NetMap {
                sign: 1.0,
                shift_mw: 0.0,
                base,
            },
        };
        let (a, b) = (map.apply(u.min), map.apply(u.max));
        dims.push((u.bus, u.quantity));
        lower.push(a.min(b));
        upper.push(a.max(b));
        net_maps.push(map);
    }
    let bounds = UncertainBox::new(DimensionMap(dims), lower, upper)
        .map_err(|e| anyhow!("field `uncertain`: {e}"))?;

    if let Some(d) = &config.dist_ref() {
        validate_dist_kind(d)?;
    }

    Ok(Study {
        config_dir: config_dir.to_path_buf(),
        case,
        targets: config.targets.iter().map(|t| t.bus).collect(),
        bounds,
        delta: config.delta,
        budget: config.budget,
        seed: config.seed,
        jobs: config.jobs,
        mcs_n: config.mcs_n,
        hist_bins: (config.hist_bins > 0).then_some(config.hist_bins),
        predictive_std: config.predictive_std,
        xi_tol,
        net_maps,
        dist_config: config.test_dist,
    })
}

impl StudyConfig {
    fn dist_ref(&self) -> Option<&DistConfig> {
        self.test_dist.as_ref()
    }
}

fn validate_dist_kind(d: &DistConfig) -> Result<()> {
    match d.kind.as_str() {
        "uniform" | "normal" | "gamma" | "empirical" => Ok(()),
        other => bail!("field `test_dist.kind`: unknown kind `{other}`"),
    }
}

impl Study {
    pub fn xi_tol_pu(&self, target: BusId) -> f64 {
        let idx = self.case.bus_index(target).expect("validated");
        self.xi_tol.per_unit(self.case.buses()[idx].base_kv)
    }

    /// Build the test-phase distribution in net-injection space.
    pub fn input_distribution(&self) -> Result<InputDistribution> {
        let d = self
            .dist_config
            .as_ref()
            .ok_or_else(|| anyhow!("this command needs a [test_dist] table in the config"))?;
        let ndim = self.bounds.ndim();
        let expect_len = |v: &[f64], what: &str| -> Result<()> {
            if v.len() != ndim {
                bail!("field `test_dist.{what}`: expected {ndim} entries, got {}", v.len());
            }
            Ok(())
        };
        let kind = match d.kind.as_str() {
            "uniform" => DistKind::Uniform {
                lower: self.bounds.lower.clone(),
                upper: self.bounds.upper.clone(),
            },
            "normal" => {
                expect_len(&d.mean, "mean")?;
                expect_len(&d.std, "std")?;
                let mean = d
                    .mean
                    .iter()
                    .zip(&self.net_maps)
                    .map(|(m, map)| map.apply(*m))
                    .collect();
                let std = d
                    .std
                    .iter()
                    .zip(&self.net_maps)
                    .map(|(s, map)| s / map.base)
                    .collect();
                DistKind::Normal { mean, std }
            }
            "gamma" => {
                expect_len(&d.shape, "shape")?;
                expect_len(&d.scale, "scale")?;
                if !d.offset.is_empty() {
                    expect_len(&d.offset, "offset")?;
                }
                let scale = d
                    .scale
                    .iter()
                    .zip(&self.net_maps)
                    .map(|(b, map)| map.sign * b / map.base)
                    .collect();
                let offset = (0..ndim)
                    .map(|k| self.net_maps[k].apply(d.offset.get(k).copied().unwrap_or(0.0)))
                    .collect();
                DistKind::Gamma {
                    shape: d.shape.clone(),
                    scale,
                    offset,
                }
            }
            "empirical" => {
                let mut rows = d.samples.clone();
                if let Some(csv) = &d.samples_csv {
                    let path = self.config_dir.join(csv);
                    let text = fs::read_to_string(&path)
                        .with_context(|| format!("cannot read {}", path.display()))?;
                    for (ln, line) in text.lines().enumerate() {
                        let line = line.trim();
                        if line.is_empty() {
                            continue;
                        }
                        let row: Vec<f64> = line
                            .split(',')
                            .map(|tok| tok.trim().parse::<f64>())
                            .collect::<Result<_, _>>()
                            .with_context(|| {
                                format!("{}:{}: non-numeric sample", path.display(), ln + 1)
                            })?;
                        rows.push(row);
                    }
                }
                if rows.is_empty() {
                    bail!("field `test_dist`: empirical distribution has no samples");
                }
                if rows.iter().any(|r| r.len() != ndim) {
                    bail!("field `test_dist.samples`: rows must have {ndim} entries");
                }
                let rows = rows
                    .iter()
                    .map(|r| {
                        r.iter()
                            .zip(&self.net_maps)
                            .map(|(v, map)| map.apply(*v))
                            .collect()
                    })
                    .collect();
                DistKind::Empirical { samples: rows }
            }
            other => bail!("field `test_dist.kind`: unknown kind `{other}`"),
        };
        let dist = InputDistribution {
            dims: self.bounds.dims.clone(),
            kind,
            truncate_to: d
                .truncate
                .then(|| (self.bounds.lower.clone(), self.bounds.upper.clone())),
        };
        Ok(dist)
    }

    fn dist_label(&self) -> String {
        self.dist_config
            .as_ref()
            .map(|d| d.kind.clone())
            .unwrap_or_else(|| "uniform".into())
    }
}

/// Consistent artifact naming inside the output directory.
pub mod paths {
    use super::*;
    pub fn learn_json(out: &Path, bus: BusId) -> PathBuf {
        out.join(format!("learn_bus{bus}.json"))
    }
    pub fn trace_csv(out: &Path, bus: BusId) -> PathBuf {
        out.join(format!("trace_bus{bus}.csv"))
    }
    pub fn band_csv(out: &Path, bus: BusId) -> PathBuf {
        out.join(format!("band_bus{bus}.csv"))
    }
    pub fn test_json(out: &Path, bus: BusId, dist: &str) -> PathBuf {
        out.join(format!("test_bus{bus}_{dist}.json"))
    }
    pub fn test_hist_csv(out: &Path, bus: BusId, dist: &str) -> PathBuf {
        out.join(format!("hist_bus{bus}_{dist}.csv"))
    }
    pub fn mcs_json(out: &Path, bus: BusId, dist: &str) -> PathBuf {
        out.join(format!("mcs_bus{bus}_{dist}.json"))
    }
    pub fn mcs_hist_csv(out: &Path, bus: BusId, dist: &str) -> PathBuf {
        out.join(format!("mcs_hist_bus{bus}_{dist}.csv"))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_table(
    out_dir: &Path,
    stem: &str,
    format: OutputFormat,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    match format {
        OutputFormat::Csv => {
            let mut text = header.join(",");
            text.push('\n');
            for row in rows {
                text.push_str(&row.join(","));
                text.push('\n');
            }
            let path = out_dir.join(format!("{stem}.csv"));
            write_file(&path, &text)?;
            Ok(path)
        }
        OutputFormat::Json => {
            let objects: Vec<serde_json::Value> = rows
                .iter()
                .map(|row| {
                    header
                        .iter()
                        .zip(row)
                        .map(|(k, v)| {
                            let value = v
                                .parse::<f64>()
                                .map(|n| serde_json::json!(n))
                                .unwrap_or_else(|_| serde_json::json!(v));
                            ((*k).to_string(), value)
                        })
                        .collect::<serde_json::Map<_, _>>()
                        .into()
                })
                .collect();
            let path = out_dir.join(format!("{stem}.json"));
            write_file(&path, &format!("{:#}\n", serde_json::Value::Array(objects)))?;
            Ok(path)
        }
    }
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<&str>, widths: &[usize], out: &mut String| {
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:<w$}");
        }
        out.push('\n');
    };
    fmt_row(header.to_vec(), &widths, &mut out);
    for row in rows {
        fmt_row(row.iter().map(String::as_str).collect(), &widths, &mut out);
    }
    out
}

#[derive(Debug)]
pub struct CommandOutcome {
    /// False when any target failed to converge.
    pub all_converged: bool,
    /// Rendered summary for stdout.
    pub summary: String,
}

/// Parse and validate a case file, reporting its shape.
pub fn cmd_parse_check(case_path: &Path) -> Result<CommandOutcome> {
    let text = fs::read_to_string(case_path)
        .with_context(|| format!("cannot read {}", case_path.display()))?;
    let case =
        parse_case(&text).map_err(|e| anyhow!("{}: {e}", case_path.display()))?;
    let summary = format!(
        "{}: ok ({} buses, {} branches, {} generators, baseMVA {})\n",
        case_path.display(),
        case.n(),
        case.branches().len(),
        case.gens().len(),
        case.base_mva()
    );
    Ok(CommandOutcome {
        all_converged: true,
        summary,
    })
}

/// Learn one surrogate per target; write result JSON, trace CSV and a summary
/// table (target, xi_max, N, time).
pub fn cmd_learn(study: &Study, out_dir: &Path, format: OutputFormat) -> Result<CommandOutcome> {
    use rayon::prelude::*;
    type TimedLearn = Result<(LearnResult, f64), learn::LearnError>;
    let schedule = BetaSchedule::FiniteCandidate;
    let outcomes: Vec<(BusId, TimedLearn)> = study
        .targets
        .par_iter()
        .enumerate()
        .map(|(k, bus)| {
            let started = Instant::now();
            let outcome = learn::learn(
                &study.case,
                *bus,
                &study.bounds,
                study.delta,
                study.xi_tol_pu(*bus),
                &schedule,
                study.budget,
                derive_seed(study.seed, k as u64),
            )
            .map(|res| (res, started.elapsed().as_secs_f64()));
            (*bus, outcome)
        })
        .collect();

    let mut rows = Vec::new();
    let mut all_converged = true;
    for (bus, outcome) in outcomes {
        let (result, secs) = outcome.map_err(|e| anyhow!("target {bus}: {e}"))?;
        write_file(&paths::learn_json(out_dir, bus), &result.to_json())?;
        write_file(&paths::trace_csv(out_dir, bus), &result.trace_csv())?;
        write_file(&paths::band_csv(out_dir, bus), &band_csv(&result)?)?;
        all_converged &= result.converged;
        rows.push(vec![
            format!("V{bus}"),
            format!("{:.6}", result.xi_max * result.target.base_kv),
            format!("{:.6e}", result.xi_max),
            result.n_train.to_string(),
            result.converged.to_string(),
            format!("{secs:.3}"),
        ]);
    }
    let header = [
        "variable",
        "xi_max_kv",
        "xi_max_pu",
        "n_train",
        "converged",
        "time_secs",
    ];
    write_table(out_dir, "learn_summary", format, &header, &rows)?;
    Ok(CommandOutcome {
        all_converged,
        summary: render_table(&header, &rows),
    })
}

/// Push the configured test distribution through previously learned
/// surrogates.
pub fn cmd_test(study: &Study, out_dir: &Path, format: OutputFormat) -> Result<CommandOutcome> {
    let dist = study.input_distribution()?;
    let label = study.dist_label();
    let mut rows = Vec::new();
    for (k, bus) in study.targets.iter().enumerate() {
        let artifact = paths::learn_json(out_dir, *bus);
        let text = fs::read_to_string(&artifact).with_context(|| {
            format!(
                "missing learn artifact {} (run `plf learn` first)",
                artifact.display()
            )
        })?;
        let result = LearnResult::from_json(&text)
            .map_err(|e| anyhow!("incompatible artifact {}: {e}", artifact.display()))?;
        if result.input_box.dims != study.bounds.dims {
            bail!(
                "artifact {} was learned over different dimensions than this config",
                artifact.display()
            );
        }
        let report = testing::test_detailed(
            &result,
            &dist,
            study.mcs_n,
            derive_seed(study.seed, 1000 + k as u64),
            study.hist_bins,
            study.predictive_std,
        )?;
        write_file(&paths::test_json(out_dir, *bus, &label), &report.to_json())?;
        write_file(
            &paths::test_hist_csv(out_dir, *bus, &label),
            &report.histogram.to_csv(),
        )?;
        rows.push(summary_row(*bus, &report));
    }
    let header = [
        "variable", "dist", "n", "mean_pu", "std_pu", "mean_kv", "std_kv", "elapsed_secs",
    ];
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|r| {
            let mut r = r;
            r.insert(1, label.clone());
            r
        })
        .collect();
    write_table(out_dir, "test_summary", format, &header, &rows)?;
    Ok(CommandOutcome {
        all_converged: true,
        summary: render_table(&header, &rows),
    })
}

/// Monte-Carlo baseline through the full solver.
pub fn cmd_mcs(study: &Study, out_dir: &Path, format: OutputFormat) -> Result<CommandOutcome> {
    let dist = study.input_distribution()?;
    let label = study.dist_label();
    let mut rows = Vec::new();
    for (k, bus) in study.targets.iter().enumerate() {
        let report = testing::mcs_with_bins(
            &study.case,
            *bus,
            &dist,
            study.mcs_n,
            derive_seed(study.seed, 1000 + k as u64),
            study.hist_bins,
        )?;
        write_file(&paths::mcs_json(out_dir, *bus, &label), &report.to_json())?;
        write_file(
            &paths::mcs_hist_csv(out_dir, *bus, &label),
            &report.histogram.to_csv(),
        )?;
        rows.push(summary_row(*bus, &report));
    }
    let header = [
        "variable", "dist", "n", "mean_pu", "std_pu", "mean_kv", "std_kv", "elapsed_secs",
    ];
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .map(|r| {
            let mut r = r;
            r.insert(1, label.clone());
            r
        })
        .collect();
    write_table(out_dir, "mcs_summary", format, &header, &rows)?;
    Ok(CommandOutcome {
        all_converged: true,
        summary: render_table(&header, &rows),
    })
}

/// Plot-ready surrogate curve: posterior mean with the `±√β·σ` band over a
/// grid of the box (a dense sweep in one dimension, a Sobol grid otherwise).
fn band_csv(result: &LearnResult) -> Result<String> {
    let bounds = &result.input_box;
    let d = bounds.ndim();
    let grid: Vec<Vec<f64>> = if d == 1 {
        (0..=200)
            .map(|i| vec![bounds.lower[0] + (bounds.upper[0] - bounds.lower[0]) * i as f64 / 200.0])
            .collect()
    } else {
        bounds
            .sobol_points(0, 200 * d)
            .map_err(|e| anyhow!("{e}"))?
    };
    let (means, stds) = result
        .model
        .posterior_batch(&grid)
        .map_err(|e| anyhow!("{e}"))?;
    let sqrt_beta = result.beta_final.sqrt();
    let mut out = String::new();
    for k in 0..d {
        let _ = write!(out, "x{k},");
    }
    out.push_str("mean,lower,upper\n");
    for (point, (mean, std)) in grid.iter().zip(means.iter().zip(&stds)) {
        for v in point {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(
            out,
            "{},{},{}",
            mean,
            mean - sqrt_beta * std,
            mean + sqrt_beta * std
        );
    }
    Ok(out)
}

fn summary_row(bus: BusId, report: &TestReport) -> Vec<String> {
    vec![
        format!("V{bus}"),
        report.n_samples.to_string(),
        format!("{:.8}", report.mean_pu),
        format!("{:.8}", report.std_pu),
        format!("{:.6}", report.mean_kv),
        format!("{:.6}", report.std_kv),
        format!("{:.4}", report.elapsed_secs),
    ]
}

/// End-to-end study: learn, then compare the surrogate against a paired
/// Monte-Carlo run on the same draws. Emits an error-index table and a
/// wall-clock comparison.
pub fn cmd_compare(study: &Study, out_dir: &Path, format: OutputFormat) -> Result<CommandOutcome> {
    let learn_outcome = cmd_learn(study, out_dir, format)?;
    let dist = match study.dist_config.as_ref() {
        Some(_) => study.input_distribution()?,
        None => InputDistribution {
            dims: study.bounds.dims.clone(),
            kind: DistKind::Uniform {
                lower: study.bounds.lower.clone(),
                upper: study.bounds.upper.clone(),
            },
            truncate_to: None,
        },
    };
    let label = study.dist_label();

    let mut error_rows = Vec::new();
    let mut timing_rows = Vec::new();
    for (k, bus) in study.targets.iter().enumerate() {
        let text = fs::read_to_string(paths::learn_json(out_dir, *bus))?;
        let result = LearnResult::from_json(&text).map_err(|e| anyhow!("{e}"))?;
        let seed = derive_seed(study.seed, 2000 + k as u64);
        let draws = testing::sample(&dist, study.mcs_n, seed)?;

        let eps = testing::error_index(&draws, &result, &study.case, *bus)?;
        let gp_report = testing::test_with_bins(&result, &dist, study.mcs_n, seed, study.hist_bins)?;
        let mc_report = testing::mcs_with_bins(
            &study.case,
            *bus,
            &dist,
            study.mcs_n,
            seed,
            study.hist_bins,
        )?;
        write_file(&paths::test_json(out_dir, *bus, &label), &gp_report.to_json())?;
        write_file(
            &paths::test_hist_csv(out_dir, *bus, &label),
            &gp_report.histogram.to_csv(),
        )?;
        write_file(&paths::mcs_json(out_dir, *bus, &label), &mc_report.to_json())?;
        write_file(
            &paths::mcs_hist_csv(out_dir, *bus, &label),
            &mc_report.histogram.to_csv(),
        )?;

        error_rows.push(vec![
            uncertain_label(study),
            format!("V{bus}"),
            format!("{:.6}", eps.eps_v_percent),
            result.n_train.to_string(),
            eps.n_samples.to_string(),
        ]);
        let speedup = mc_report.elapsed_secs / gp_report.elapsed_secs.max(1e-12);
        timing_rows.push(vec![
            format!("V{bus}"),
            format!("{:.6}", gp_report.elapsed_secs),
            format!("{:.6}", mc_report.elapsed_secs),
            format!("{:.1}", speedup),
        ]);
    }
    let error_header = ["uncertain_source", "variable", "eps_v_percent", "n_train", "n_samples"];
    write_table(out_dir, "compare", format, &error_header, &error_rows)?;
    let timing_header = ["variable", "gp_test_secs", "mcs_secs", "speedup"];
    write_table(out_dir, "timing", format, &timing_header, &timing_rows)?;

    let mut summary = learn_outcome.summary;
    summary.push('\n');
    summary.push_str(&render_table(&error_header, &error_rows));
    summary.push('\n');
    summary.push_str(&render_table(&timing_header, &timing_rows));
    Ok(CommandOutcome {
        all_converged: learn_outcome.all_converged,
        summary,
    })
}

fn uncertain_label(study: &Study) -> String {
    study
        .bounds
        .dims
        .iter()
        .map(|(bus, q)| {
            format!(
                "{}@{bus}",
                match q {
                    Quantity::Active => "P",
                    Quantity::Reactive => "Q",
                }
            )
        })
        .collect::<Vec<_>>()
        .join("+")
}

/// Simple reader for the emitted CSV tables; header plus string cells.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| anyhow!("{}: empty file", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}
