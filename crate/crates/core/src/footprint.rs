//! Energy, carbon and cost accounting for fine-tuning runs.
//!
//! `E = Σ N_g · t_g · P_g · PUE · η` in kWh; carbon is `E × intensity`;
//! a baseline without measured hours is estimated from its token count and
//! a per-GPU training throughput. Numbers are rounded only for display
//! (three significant figures); CSV output carries raw values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PUBLISHED_RUNS: &str = include_str!("../data/paper_runs.toml");

#[derive(Debug, Error, PartialEq)]
pub enum FootprintError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown carbon preset {0:?}")]
    UnknownPreset(String),
    #[error("cannot parse footprint config: {0}")]
    Parse(String),
}

fn invalid(msg: impl Into<String>) -> FootprintError {
    FootprintError::InvalidParams(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuRun {
    pub label: String,
    #[serde(default)]
    pub gpu_model: String,
    pub gpu_count: u32,
    pub wall_hours: f64,
    pub power_kw: f64,
    #[serde(default)]
    pub purpose: String,
}

impl GpuRun {
    pub fn new(label: &str, gpu_model: &str, gpu_count: u32, wall_hours: f64, power_kw: f64) -> Self {
        Self {
            label: label.into(),
            gpu_model: gpu_model.into(),
            gpu_count,
            wall_hours,
            power_kw,
            purpose: String::new(),
        }
    }

    pub fn gpu_hours(&self) -> f64 {
        self.gpu_count as f64 * self.wall_hours
    }

    /// Zero hours is allowed (an empty run costs nothing); counts and power
    /// must be positive.
    pub fn validate(&self) -> Result<(), FootprintError> {
        if self.gpu_count == 0 {
            return Err(invalid(format!("{}: gpu_count must be positive", self.label)));
        }
        if !(self.wall_hours.is_finite() && self.wall_hours >= 0.0) {
            return Err(invalid(format!("{}: wall_hours must be non-negative", self.label)));
        }
        if !(self.power_kw.is_finite() && self.power_kw > 0.0) {
            return Err(invalid(format!("{}: power_kw must be positive", self.label)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteParams {
    pub pue: f64,
    pub utilization: f64,
}

impl Default for SiteParams {
    fn default() -> Self {
        Self {
            pue: 1.3,
            utilization: 0.9,
        }
    }
}

impl SiteParams {
    /// No datacentre overhead and full draw: `E = GPU·h × P`.
    pub fn bare() -> Self {
        Self {
            pue: 1.0,
            utilization: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), FootprintError> {
        if !(self.pue.is_finite() && self.pue >= 1.0) {
            return Err(invalid("pue must be at least 1"));
        }
        if !(self.utilization > 0.0 && self.utilization <= 1.0) {
            return Err(invalid("utilization must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonParams {
    pub name: String,
    pub intensity_kg_per_kwh: f64,
}

pub const CARBON_PRESETS: &[(&str, f64)] = &[
    ("global-2024-mean", 0.40),
    ("owid-2024", 0.436),
    ("global-average-0.38", 0.38),
];

impl CarbonParams {
    pub fn preset(name: &str) -> Result<Self, FootprintError> {
        CARBON_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(n, v)| Self {
                name: n.into(),
                intensity_kg_per_kwh: v,
            })
            .ok_or_else(|| FootprintError::UnknownPreset(name.into()))
    }

    pub fn custom(intensity: f64) -> Result<Self, FootprintError> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(invalid("carbon intensity must be non-negative"));
        }
        Ok(Self {
            name: format!("custom-{intensity}"),
            intensity_kg_per_kwh: intensity,
        })
    }

    /// A preset name or a bare number.
    pub fn parse(spec: &str) -> Result<Self, FootprintError> {
        match spec.parse::<f64>() {
            Ok(v) => Self::custom(v),
            Err(_) => Self::preset(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputEstimate {
    pub training_tokens: f64,
    pub gpu_count: u32,
    pub rate_tok_per_s_per_gpu: f64,
}

impl ThroughputEstimate {
    /// 675 M tokens on 8 GPUs at 55 tok/s/GPU.
    pub fn atlas_baseline() -> Self {
        Self {
            training_tokens: 675e6,
            gpu_count: 8,
            rate_tok_per_s_per_gpu: 55.0,
        }
    }

    /// Training throughput from an inference benchmark: a backward pass
    /// costs roughly twice the forward, hence the divisor.
    pub fn rate_from_inference(inference_tok_per_s: f64, divisor: f64) -> f64 {
        inference_tok_per_s / divisor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallEstimate {
    pub wall_hours: f64,
    pub gpu_hours: f64,
}

pub fn energy_kwh(run: &GpuRun, site: &SiteParams) -> Result<f64, FootprintError> {
    run.validate()?;
    site.validate()?;
    Ok(run.gpu_count as f64 * run.wall_hours * run.power_kw * site.pue * site.utilization)
}

pub fn total_energy(runs: &[GpuRun], site: &SiteParams) -> Result<f64, FootprintError> {
    runs.iter().map(|r| energy_kwh(r, site)).sum()
}

pub fn carbon_kg(energy_kwh: f64, params: &CarbonParams) -> f64 {
    energy_kwh * params.intensity_kg_per_kwh
}

pub fn wall_hours_from_tokens(est: &ThroughputEstimate) -> Result<WallEstimate, FootprintError> {
    if !(est.training_tokens > 0.0 && est.gpu_count > 0 && est.rate_tok_per_s_per_gpu > 0.0) {
        return Err(invalid("tokens, gpu count and rate must be positive"));
    }
    let wall_hours = est.training_tokens / (est.gpu_count as f64 * est.rate_tok_per_s_per_gpu * 3600.0);
    Ok(WallEstimate {
        wall_hours,
        gpu_hours: wall_hours * est.gpu_count as f64,
    })
}

pub fn cost_usd(gpu_hours: f64, rate_usd_per_gpu_hour: f64) -> f64 {
    gpu_hours * rate_usd_per_gpu_hour
}

/// Three significant figures, no exponent. Rounds half-up on the shortest
/// decimal form of `x`, so 4.095 shows as 4.10 even though the nearest
/// double lies just below it.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let mut exp: i32 = exp.parse().expect("exponent");
    let mut digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    digits.resize(digits.len().max(4), 0);
    let round_up = digits[3] >= 5;
    digits.truncate(3);
    if round_up {
        let mut i = 3;
        loop {
            if i == 0 {
                digits.insert(0, 1);
                digits.truncate(3);
                exp += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let d: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let body = if exp >= 2 {
        format!("{d}{}", "0".repeat((exp - 2) as usize))
    } else if exp >= 0 {
        let split = (exp + 1) as usize;
        format!("{}.{}", &d[..split], &d[split..])
    } else {
        format!("0.{}{d}", "0".repeat((-exp - 1) as usize))
    };
    if x < 0.0 { format!("-{body}") } else { body }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub label: String,
    #[serde(flatten)]
    pub estimate: ThroughputEstimate,
    pub power_kw: f64,
    /// Carbon preset name or number; defaults to the report's.
    #[serde(default)]
    pub carbon: Option<String>,
}

/// Runs plus site, carbon and pricing, as stored in a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintConfig {
    #[serde(default = "default_pue")]
    pub pue: f64,
    #[serde(default = "default_utilization")]
    pub utilization: f64,
    #[serde(default = "default_carbon")]
    pub carbon: String,
    #[serde(default = "default_rate")]
    pub cost_usd_per_gpu_hour: f64,
    #[serde(default, rename = "run")]
    pub runs: Vec<GpuRun>,
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
}

fn default_pue() -> f64 {
    1.3
}
fn default_utilization() -> f64 {
    0.9
}
fn default_carbon() -> String {
    "global-2024-mean".into()
}
fn default_rate() -> f64 {
    2.0
}

impl FootprintConfig {
    pub fn parse(text: &str) -> Result<Self, FootprintError> {
        toml::from_str(text).map_err(|e| FootprintError::Parse(e.to_string()))
    }

    /// The five published runs and the throughput baseline.
    pub fn published() -> Self {
        Self::parse(PUBLISHED_RUNS).expect("bundled runs parse")
    }

    pub fn site(&self) -> SiteParams {
        SiteParams {
            pue: self.pue,
            utilization: self.utilization,
        }
    }

    pub fn report(&self) -> Result<FootprintReport, FootprintError> {
        let carbon = CarbonParams::parse(&self.carbon)?;
        let baseline = match &self.baseline {
            Some(b) => Some(Baseline {
                label: b.label.clone(),
                estimate: b.estimate,
                power_kw: b.power_kw,
                carbon: match &b.carbon {
                    Some(c) => CarbonParams::parse(c)?,
                    None => carbon.clone(),
                },
            }),
            None => None,
        };
        footprint_report(&self.runs, &self.site(), &carbon, baseline.as_ref(), self.cost_usd_per_gpu_hour)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub label: String,
    pub estimate: ThroughputEstimate,
    pub power_kw: f64,
    pub carbon: CarbonParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: GpuRun,
    pub gpu_hours: f64,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtotal {
    pub gpu_model: String,
    pub gpu_hours: f64,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub label: String,
    pub wall_hours: f64,
    pub gpu_hours: f64,
    pub energy_kwh: f64,
    pub carbon_kg: f64,
    pub carbon_preset: String,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub site: SiteParams,
    pub rows: Vec<RunRow>,
    /// Per GPU model, in first-appearance order.
    pub subtotals: Vec<Subtotal>,
    pub total_gpu_hours: f64,
    pub total_energy_kwh: f64,
    pub carbon_kg: f64,
    pub carbon_preset: String,
    pub cost_usd: f64,
    pub cost_rate_usd_per_gpu_hour: f64,
    pub baseline: Option<BaselineSummary>,
    pub ratios: Vec<Ratio>,
}

pub fn footprint_report(
    runs: &[GpuRun],
    site: &SiteParams,
    carbon: &CarbonParams,
    baseline: Option<&Baseline>,
    cost_rate: f64,
) -> Result<FootprintReport, FootprintError> {
    site.validate()?;
    let rows = runs
        .iter()
        .map(|r| {
            Ok(RunRow {
                run: r.clone(),
                gpu_hours: r.gpu_hours(),
                energy_kwh: energy_kwh(r, site)?,
            })
        })
        .collect::<Result<Vec<_>, FootprintError>>()?;

    let mut subtotals: Vec<Subtotal> = Vec::new();
    for row in &rows {
        match subtotals.iter_mut().find(|s| s.gpu_model == row.run.gpu_model) {
            Some(s) => {
                s.gpu_hours += row.gpu_hours;
                s.energy_kwh += row.energy_kwh;
            }
            None => subtotals.push(Subtotal {
                gpu_model: row.run.gpu_model.clone(),
                gpu_hours: row.gpu_hours,
                energy_kwh: row.energy_kwh,
            }),
        }
    }
    let total_gpu_hours: f64 = rows.iter().map(|r| r.gpu_hours).sum();
    let total_energy_kwh: f64 = rows.iter().map(|r| r.energy_kwh).sum();
    let ours_carbon = carbon_kg(total_energy_kwh, carbon);

    let mut ratios = Vec::new();
    let baseline = match baseline {
        Some(b) => {
            let wall = wall_hours_from_tokens(&b.estimate)?;
            let e = wall.gpu_hours * b.power_kw * site.pue * site.utilization;
            let summary = BaselineSummary {
                label: b.label.clone(),
                wall_hours: wall.wall_hours,
                gpu_hours: wall.gpu_hours,
                energy_kwh: e,
                carbon_kg: carbon_kg(e, &b.carbon),
                carbon_preset: b.carbon.name.clone(),
                cost_usd: cost_usd(wall.gpu_hours, cost_rate),
            };
            if total_energy_kwh > 0.0 {
                ratios.push(Ratio {
                    label: "baseline energy / all runs".into(),
                    value: e / total_energy_kwh,
                });
            }
            if let Some(largest) = rows.iter().max_by(|a, b| a.energy_kwh.total_cmp(&b.energy_kwh)) {
                if largest.energy_kwh > 0.0 && rows.len() > 1 {
                    ratios.push(Ratio {
                        label: format!("baseline energy / {}", largest.run.label),
                        value: e / largest.energy_kwh,
                    });
                }
            }
            if ours_carbon > 0.0 {
                ratios.push(Ratio {
                    label: "baseline carbon / all runs".into(),
                    value: summary.carbon_kg / ours_carbon,
                });
            }
            Some(summary)
        }
        None => None,
    };

    Ok(FootprintReport {
        site: *site,
        rows,
        subtotals,
        total_gpu_hours,
        total_energy_kwh,
        carbon_kg: ours_carbon,
        carbon_preset: carbon.name.clone(),
        cost_usd: cost_usd(total_gpu_hours, cost_rate),
        cost_rate_usd_per_gpu_hour: cost_rate,
        baseline,
        ratios,
    })
}

/// Whole numbers print bare, others with one decimal as in the run table.
fn hours(x: f64) -> String {
    let r = (x * 10.0).round() / 10.0;
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.1}")
    }
}

impl FootprintReport {
    pub fn to_text(&self) -> String {
        let mut table: Vec<[String; 6]> = vec![[
            "Run".into(),
            "GPUs".into(),
            "Hours".into(),
            "GPU·h".into(),
            "kWh".into(),
            "Purpose".into(),
        ]];
        let mut rows = self.rows.iter().peekable();
        while let Some(row) = rows.next() {
            let r = &row.run;
            table.push([
                r.label.clone(),
                format!("{}×{}", r.gpu_count, r.gpu_model),
                hours(r.wall_hours),
                hours(row.gpu_hours),
                sig3(row.energy_kwh),
                r.purpose.clone(),
            ]);
            let block_ends = rows.peek().is_none_or(|n| n.run.gpu_model != r.gpu_model);
            if block_ends {
                if let Some(s) = self.subtotals.iter().find(|s| s.gpu_model == r.gpu_model) {
                    table.push([
                        format!("Subtotal {}", s.gpu_model),
                        String::new(),
                        String::new(),
                        hours(s.gpu_hours),
                        sig3(s.energy_kwh),
                        String::new(),
                    ]);
                }
            }
        }
        table.push([
            "Total".into(),
            "—".into(),
            "—".into(),
            hours(self.total_gpu_hours),
            sig3(self.total_energy_kwh),
            String::new(),
        ]);

        let widths: Vec<usize> = (0..6)
            .map(|i| table.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, r) in table.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if n == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * 5));
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "site: PUE {} · utilization {}",
            self.site.pue, self.site.utilization
        );
        let _ = writeln!(out, "energy: {} kWh", sig3(self.total_energy_kwh));
        let _ = writeln!(
            out,
            "carbon: {} kg CO2e ({})",
            sig3(self.carbon_kg),
            self.carbon_preset
        );
        let _ = writeln!(
            out,
            "cost: ${} at ${}/GPU·h",
            sig3(self.cost_usd),
            self.cost_rate_usd_per_gpu_hour
        );
        if let Some(b) = &self.baseline {
            let _ = writeln!(out);
            let _ = writeln!(out, "baseline: {}", b.label);
            let _ = writeln!(out, "  wall-clock: {} h", sig3(b.wall_hours));
            let _ = writeln!(out, "  GPU·h: {}", sig3(b.gpu_hours));
            let _ = writeln!(out, "  energy: {} kWh", sig3(b.energy_kwh));
            let _ = writeln!(out, "  carbon: {} kg CO2e ({})", sig3(b.carbon_kg), b.carbon_preset);
            let _ = writeln!(out, "  cost: ${}", sig3(b.cost_usd));
            for r in &self.ratios {
                let _ = writeln!(out, "  {}: {}×", r.label, sig3(r.value));
            }
        }
        out
    }

    /// One line per quantity with full-precision values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,label,gpu_model,gpu_count,wall_hours,gpu_hours,energy_kwh,carbon_kg,cost_usd\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "run,{},{},{},{},{},{},,",
                csv_field(&r.run.label),
                r.run.gpu_model,
                r.run.gpu_count,
                r.run.wall_hours,
                r.gpu_hours,
                r.energy_kwh
            );
        }
        for s in &self.subtotals {
            let _ = writeln!(out, "subtotal,{},{},,,{},{},,", s.gpu_model, s.gpu_model, s.gpu_hours, s.energy_kwh);
        }
        let _ = writeln!(
            out,
            "total,all runs,,,,{},{},{},{}",
            self.total_gpu_hours, self.total_energy_kwh, self.carbon_kg, self.cost_usd
        );
        if let Some(b) = &self.baseline {
            let _ = writeln!(
                out,
                "baseline,{},,,{},{},{},{},{}",
                csv_field(&b.label),
                b.wall_hours,
                b.gpu_hours,
                b.energy_kwh,
                b.carbon_kg,
                b.cost_usd
            );
        }
        for r in &self.ratios {
            let _ = writeln!(out, "ratio,{},,,,,{},,", csv_field(&r.label), r.value);
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
