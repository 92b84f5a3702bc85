use std::fmt;
use std::str::FromStr;

use dcr_tensor::Scalar;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{pretrain_model, train_model, Pretrained, TrainOutcome};
use crate::curriculum::{ScheduleKind, ScheduleSpec};
use crate::dataset::Dataset;
use crate::error::{DcrError, Result};
use crate::objectives::{HeadInput, Metrics};

/// One row of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dcr,
    Classification,
    NoPretrain,
    Te1,
    Te0,
    Linear,
    Exponential,
    NoRec,
    NoSmooth,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Classification,
        Variant::Te1,
        Variant::Te0,
        Variant::Linear,
        Variant::Exponential,
        Variant::NoPretrain,
        Variant::NoRec,
        Variant::NoSmooth,
        Variant::Dcr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcr => "dcr",
            Variant::Classification => "classification",
            Variant::NoPretrain => "no-pretrain",
            Variant::Te1 => "te-1",
            Variant::Te0 => "te-0",
            Variant::Linear => "linear",
            Variant::Exponential => "exponential",
            Variant::NoRec => "no-rec",
            Variant::NoSmooth => "no-smooth",
        }
    }

    /// Row label of the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Dcr => "DCR",
            Variant::Classification => "Classification",
            Variant::NoPretrain => "w/o pre-train",
            Variant::Te1 => "T_e = 1",
            Variant::Te0 => "T_e = 0",
            Variant::Linear => "Linear",
            Variant::Exponential => "Exponential",
            Variant::NoRec => "w/o L_rec",
            Variant::NoSmooth => "w/o smoothing",
        }
    }

    pub fn uses_pretraining(self, base: &TrainConfig) -> bool {
        self.config(base).pretrain_epochs > 0
    }

    /// `base` with this variant's change applied.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let schedule = |kind| ScheduleSpec { kind, ..base.schedule };
        match self {
            Variant::Dcr => {}
            Variant::Classification => {
                c.head_input = HeadInput::PooledTokens;
                c.weights.lambda_rec = 0.0;
                c.pretrain_epochs = 0;
            }
            Variant::NoPretrain => c.pretrain_epochs = 0,
            Variant::Te1 => c.schedule = schedule(ScheduleKind::Constant(1.0)),
            Variant::Te0 => c.schedule = schedule(ScheduleKind::Constant(0.0)),
            Variant::Linear => c.schedule = schedule(ScheduleKind::Linear),
            Variant::Exponential => c.schedule = schedule(ScheduleKind::Exponential),
            Variant::NoRec => c.weights.lambda_rec = 0.0,
            Variant::NoSmooth => c.weights.epsilon = 0.0,
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = DcrError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                DcrError::Config(format!("unknown ablation {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Parses a comma-separated suite such as `dcr,te-1,te-0`.
pub fn parse_suite(s: &str) -> Result<Vec<Variant>> {
    let suite = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(Variant::from_str)
        .collect::<Result<Vec<_>>>()?;
    if suite.is_empty() {
        return Err(DcrError::Config("empty ablation suite".into()));
    }
    Ok(suite)
}

/// Action metrics of one variant and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub action: Metrics,
}

/// Seed-averaged action metrics of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub seeds: usize,
    pub top1: f64,
    pub top1_std: f64,
    pub top5: f64,
    pub mean_recall5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn from_runs(suite: &[Variant], runs: Vec<AblationRun>) -> Self {
        let rows = suite
            .iter()
            .map(|&v| {
                let m: Vec<&Metrics> = runs.iter().filter(|r| r.variant == v).map(|r| &r.action).collect();
                let n = m.len().max(1) as f64;
                let mean = |f: fn(&Metrics) -> f64| m.iter().map(|x| f(x)).sum::<f64>() / n;
                let top1 = mean(|x| x.top1);
                let var = m.iter().map(|x| (x.top1 - top1).powi(2)).sum::<f64>() / n;
                AblationRow {
                    variant: v,
                    label: v.label().to_string(),
                    seeds: m.len(),
                    top1,
                    top1_std: var.sqrt(),
                    top5: mean(|x| x.top5),
                    mean_recall5: mean(|x| x.mean_recall5),
                }
            })
            .collect();
        AblationTable { runs, rows }
    }

    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Mean top-1 (in percent) of a variant.
    pub fn top1_percent(&self, v: Variant) -> Option<f64> {
        self.row(v).map(|r| r.top1 * 100.0)
    }

    /// Markdown table, values in percent.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Method | Top-1 | ± | Top-5 | Mean recall@5 | Seeds |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} | {} |\n",
                r.label,
                r.top1 * 100.0,
                r.top1_std * 100.0,
                r.top5 * 100.0,
                r.mean_recall5 * 100.0,
                r.seeds
            ));
        }
        out
    }
}

/// Callback seeing each finished run, e.g. to keep its model.
pub type RunObserver<'a, T> = dyn FnMut(Variant, u64, &TrainOutcome<T>) + 'a;

/// Trains every variant of `suite` once per seed on the same data. Order
/// pre-training is run once per seed and shared by all variants that use
/// it, which matches what each variant would compute alone.
pub fn run_ablation<T: Scalar>(
    suite: &[Variant],
    train: &Dataset,
    val: &Dataset,
    base: &TrainConfig,
    seeds: &[u64],
    observer: Option<&mut RunObserver<'_, T>>,
) -> Result<AblationTable> {
    if suite.is_empty() || seeds.is_empty() {
        return Err(DcrError::Config("ablation needs at least one variant and one seed".into()));
    }
    base.validate()?;
    let mut observer = observer;
    let mut runs = Vec::new();
    for &seed in seeds {
        let seeded = TrainConfig { seed, ..base.clone() };
        let mut shared: Option<Pretrained<T>> = None;
        for &v in suite {
            let cfg = v.config(&seeded);
            let pre = if cfg.pretrain_epochs > 0 {
                if shared.is_none() {
                    shared = Some(pretrain_model(&cfg, train)?);
                }
                shared.as_ref()
            } else {
                None
            };
            let outcome = train_model(&cfg, pre, train, Some(val))?;
            let action = *outcome
                .report
                .as_ref()
                .and_then(|r| r.action())
                .ok_or_else(|| DcrError::Invalid("training produced no validation report".into()))?;
            log::info!("ablation {v} seed {seed}: top-1 {:.3}", action.top1);
            if let Some(obs) = observer.as_mut() {
                obs(v, seed, &outcome);
            }
            runs.push(AblationRun { variant: v, seed, action });
        }
    }
    Ok(AblationTable::from_runs(suite, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse_and_reject() {
        assert_eq!(parse_suite("dcr, te-1").unwrap(), vec![Variant::Dcr, Variant::Te1]);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(parse_suite("dcr,bogus").unwrap_err().is_config());
        assert!(parse_suite("").is_err());
    }

    #[test]
    fn no_rec_is_lambda_rec_zero() {
        let base = TrainConfig::desk(8);
        let mut manual = base.clone();
        manual.weights.lambda_rec = 0.0;
        assert_eq!(Variant::NoRec.config(&base), manual);
        let cls = Variant::Classification.config(&base);
        assert_eq!(cls.head_input, HeadInput::PooledTokens);
        assert!(!Variant::Classification.uses_pretraining(&base));
        assert_eq!(Variant::Te0.config(&base).schedule.kind, ScheduleKind::Constant(0.0));
    }
}
