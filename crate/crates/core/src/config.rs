//! Human-editable configuration files.
//!
//! One grammar serves the simulator, the baseline library, the training
//! setup and split specs: `[section]` headers, `key = value` pairs, `#`
//! comments and blank lines. Channels are sections named `[channel.1]`,
//! `[channel.2]`, ... in load order. See the repository README for the full
//! key reference.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::baseline::SignatureLibrary;
use crate::dataio::SplitSpec;
use crate::error::{Error, Result};
use crate::net::{AugmentationConfig, TrainConfig};
use crate::sim::{LoadKind, LoadModel, SimConfig, DEFAULT_MAINS_VOLTAGE, DEFAULT_SAMPLE_INTERVAL};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    /// Section name -> ordered key/value pairs.
    sections: Vec<(String, BTreeMap<String, String>)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, BTreeMap<String, String>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                sections.push((name.trim().to_string(), BTreeMap::new()));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let section = sections.last_mut().ok_or_else(|| {
                Error::Config(format!(
                    "line {}: `{key}` appears before any [section]",
                    lineno + 1
                ))
            })?;
            section
                .1
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn section(&self, name: &str) -> Option<Section<'_>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, kv)| Section { name: n, kv })
    }

    /// Channel sections `[channel.1]`, `[channel.2]`, ... in numeric order.
    pub fn channel_sections(&self) -> Result<Vec<Section<'_>>> {
        let mut numbered: Vec<(usize, Section<'_>)> = Vec::new();
        for (name, kv) in &self.sections {
            if let Some(num) = name.strip_prefix("channel.") {
                let idx: usize = num.parse().map_err(|_| {
                    Error::Config(format!("section [{name}]: channel index must be a number"))
                })?;
                numbered.push((idx, Section { name, kv }));
            }
        }
        numbered.sort_by_key(|(idx, _)| *idx);
        for (pos, (idx, _)) in numbered.iter().enumerate() {
            if *idx != pos + 1 {
                return Err(Error::Config(format!(
                    "channel sections must be numbered 1..N without gaps; found channel.{idx}"
                )));
            }
        }
        Ok(numbered.into_iter().map(|(_, s)| s).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    name: &'a str,
    kv: &'a BTreeMap<String, String>,
}

impl<'a> Section<'a> {
    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.kv.get(key).map(|s| s.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::Config(format!("[{}] {key} = {v}: not a number", self.name))
                })
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>().map_err(|_| {
                    Error::Config(format!("[{}] {key} = {v}: not an integer", self.name))
                })
            })
            .transpose()
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                other => Err(Error::Config(format!(
                    "[{}] {key} = {other}: expected true/false",
                    self.name
                ))),
            })
            .transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.f64(key)?.ok_or_else(|| {
            Error::Config(format!("[{}]: missing required key `{key}`", self.name))
        })
    }
}

fn load_from_section(section: &Section<'_>, index: usize) -> Result<LoadModel> {
    let kind = match section.get("kind").unwrap_or("induction_motor") {
        "induction_motor" | "motor" => LoadKind::InductionMotor,
        "resistive" => LoadKind::Resistive,
        other => {
            return Err(Error::Config(format!(
                "[channel.{index}] kind = {other}: expected induction_motor or resistive"
            )))
        }
    };
    let name = section
        .get("name")
        .map(str::to_string)
        .unwrap_or_else(|| format!("M{index}"));
    let rated_power = section.require_f64("rated_power")?;
    let mut load = match kind {
        LoadKind::InductionMotor => LoadModel::motor(&name, rated_power),
        LoadKind::Resistive => LoadModel::resistive(&name, rated_power),
    };
    if let Some(v) = section.f64("inrush_multiplier")? {
        load.inrush_multiplier = v;
    }
    if let Some(v) = section.f64("inrush_duration")? {
        load.inrush_duration = v;
    }
    if let Some(v) = section.f64("steady_noise_sigma")? {
        load.steady_noise_sigma = v;
    }
    if let Some(v) = section.f64("power_factor")? {
        load.power_factor = v;
    }
    load.validate()?;
    Ok(load)
}

/// Builds a [`SimConfig`] from the `[sim]` section plus `[channel.*]`.
pub fn sim_config(file: &ConfigFile) -> Result<SimConfig> {
    let sim = file
        .section("sim")
        .ok_or_else(|| Error::Config("missing [sim] section".to_string()))?;
    let channels: Vec<LoadModel> = file
        .channel_sections()?
        .iter()
        .enumerate()
        .map(|(i, s)| load_from_section(s, i + 1))
        .collect::<Result<_>>()?;
    if channels.is_empty() {
        return Err(Error::Config("no [channel.N] sections found".to_string()));
    }
    let config = SimConfig {
        seed: sim.u64("seed")?.unwrap_or(0),
        horizon: sim.require_f64("horizon")?,
        sample_interval_mean: sim
            .f64("sample_interval_mean")?
            .unwrap_or(DEFAULT_SAMPLE_INTERVAL),
        sample_interval_jitter_sigma: sim.f64("sample_interval_jitter_sigma")?.unwrap_or(0.0),
        mains_voltage_nominal: sim
            .f64("mains_voltage_nominal")?
            .unwrap_or(DEFAULT_MAINS_VOLTAGE),
        voltage_noise_sigma: sim.f64("voltage_noise_sigma")?.unwrap_or(0.0),
        current_noise_sigma: sim.f64("current_noise_sigma")?.unwrap_or(0.0),
        spurious_rate: sim.f64("spurious_rate")?.unwrap_or(0.0),
        channels,
    };
    config.validate()?;
    Ok(config)
}

/// Schedule generation inputs from the `[schedule]` section.
pub struct ScheduleParams {
    pub seed: u64,
    pub mean_dwell: f64,
}

pub fn schedule_params(file: &ConfigFile) -> Result<ScheduleParams> {
    let section = file
        .section("schedule")
        .ok_or_else(|| Error::Config("missing [schedule] section".to_string()))?;
    Ok(ScheduleParams {
        seed: section.u64("seed")?.unwrap_or(0),
        mean_dwell: section.require_f64("mean_dwell")?,
    })
}

/// Builds a [`SignatureLibrary`] from `[baseline]` plus `[channel.*]`.
/// `steady_power` falls back to `rated_power` per channel.
pub fn signature_library(file: &ConfigFile) -> Result<SignatureLibrary> {
    let section = file
        .section("baseline")
        .ok_or_else(|| Error::Config("missing [baseline] section".to_string()))?;
    let edge_threshold = section.f64("edge_threshold")?.unwrap_or(5.0);
    let mut names = Vec::new();
    let mut powers = Vec::new();
    for (i, ch) in file.channel_sections()?.iter().enumerate() {
        names.push(
            ch.get("name")
                .map(str::to_string)
                .unwrap_or_else(|| format!("M{}", i + 1)),
        );
        let p = match ch.f64("steady_power")? {
            Some(v) => v,
            None => ch.require_f64("rated_power")?,
        };
        powers.push(p);
    }
    SignatureLibrary::new(names, powers, edge_threshold)
}

/// Builds a [`TrainConfig`] from the `[train]` section; missing keys keep the
/// bench defaults.
pub fn train_config(file: &ConfigFile) -> Result<TrainConfig> {
    let section = file
        .section("train")
        .ok_or_else(|| Error::Config("missing [train] section".to_string()))?;
    let defaults = TrainConfig::default();
    let aug_defaults = AugmentationConfig::default();
    let config = TrainConfig {
        input_size: section.usize("input_size")?.unwrap_or(defaults.input_size),
        batch_size: section.usize("batch_size")?.unwrap_or(defaults.batch_size),
        learning_rate: section
            .f64("learning_rate")?
            .unwrap_or(defaults.learning_rate),
        hidden_size: section
            .usize("hidden_size")?
            .unwrap_or(defaults.hidden_size),
        dropout: section.f64("dropout")?.unwrap_or(defaults.dropout),
        seq_len: section.usize("seq_len")?.unwrap_or(defaults.seq_len),
        epochs: section.usize("epochs")?.unwrap_or(defaults.epochs),
        n_appliances: section
            .usize("n_appliances")?
            .unwrap_or(defaults.n_appliances),
        n_heads: section.usize("n_heads")?.unwrap_or(defaults.n_heads),
        lambda_cls: section.f64("lambda_cls")?.unwrap_or(defaults.lambda_cls),
        on_threshold: section
            .f64("on_threshold")?
            .unwrap_or(defaults.on_threshold),
        seed: section.u64("seed")?.unwrap_or(defaults.seed),
        augmentation: AugmentationConfig {
            enabled: section.bool("augment")?.unwrap_or(aug_defaults.enabled),
            recombination_prob: section
                .f64("recombination_prob")?
                .unwrap_or(aug_defaults.recombination_prob),
            time_shift_max: section
                .usize("time_shift_max")?
                .unwrap_or(aug_defaults.time_shift_max),
            amplitude_jitter_sigma: section
                .f64("amplitude_jitter_sigma")?
                .unwrap_or(aug_defaults.amplitude_jitter_sigma),
        },
    };
    config.validate()?;
    Ok(config)
}

/// Split specification: either explicit intervals per split or target
/// fractions to be resolved against a dataset.
pub enum SplitSource {
    Explicit(SplitSpec),
    Fractions([f64; 3]),
}

fn parse_intervals(text: &str, what: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|piece| {
            let piece = piece.trim();
            let (a, b) = piece.split_once("..").ok_or_else(|| {
                Error::Config(format!("{what}: `{piece}` is not a `start..end` range"))
            })?;
            let start: f64 = a.trim().parse().map_err(|_| {
                Error::Config(format!("{what}: `{a}` is not a number"))
            })?;
            let end: f64 = b.trim().parse().map_err(|_| {
                Error::Config(format!("{what}: `{b}` is not a number"))
            })?;
            Ok((start, end))
        })
        .collect()
}

pub fn split_source(file: &ConfigFile) -> Result<SplitSource> {
    let section = file
        .section("split")
        .ok_or_else(|| Error::Config("missing [split] section".to_string()))?;
    if let Some(fr) = section.get("fractions") {
        let parts: Vec<f64> = fr
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("[split] fractions: `{p}` not a number")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::Config(
                "[split] fractions needs exactly 3 comma-separated values".to_string(),
            ));
        }
        return Ok(SplitSource::Fractions([parts[0], parts[1], parts[2]]));
    }
    let mut spec = SplitSpec::default();
    for (key, out) in [
        ("train", &mut spec.train_intervals),
        ("val", &mut spec.val_intervals),
        ("test", &mut spec.test_intervals),
    ] {
        let text = section.get(key).ok_or_else(|| {
            Error::Config(format!(
                "[split]: provide either `fractions` or `train`/`val`/`test` interval lists \
                 (missing `{key}`)"
            ))
        })?;
        *out = parse_intervals(text, &format!("[split] {key}"))?;
    }
    spec.validate()?;
    Ok(SplitSource::Explicit(spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# bench testbed
[sim]
seed = 42
horizon = 54000
sample_interval_mean = 5
sample_interval_jitter_sigma = 0.8
voltage_noise_sigma = 1.0
current_noise_sigma = 0.02
spurious_rate = 0.002

[channel.1]
name = M1
kind = induction_motor
rated_power = 50
steady_noise_sigma = 0.5

[channel.2]
name = M4
kind = resistive
rated_power = 7.5
power_factor = 1.0

[schedule]
seed = 1
mean_dwell = 600

[baseline]
edge_threshold = 5

[train]
hidden_size = 16
n_heads = 2
seq_len = 64
n_appliances = 2
epochs = 3
augment = false
";

    #[test]
    fn parses_full_bench_file() {
        let file = ConfigFile::parse(SAMPLE).unwrap();
        let sim = sim_config(&file).unwrap();
        assert_eq!(sim.seed, 42);
        assert_eq!(sim.channels.len(), 2);
        assert_eq!(sim.channels[0].name, "M1");
        assert_eq!(sim.channels[1].rated_power, 7.5);
        assert_eq!(sim.channels[0].inrush_multiplier, 3.0); // motor default

        let sched = schedule_params(&file).unwrap();
        assert_eq!(sched.seed, 1);
        assert_eq!(sched.mean_dwell, 600.0);

        let lib = signature_library(&file).unwrap();
        assert_eq!(lib.steady_power, vec![50.0, 7.5]);
        assert_eq!(lib.edge_threshold, 5.0);

        let train = train_config(&file).unwrap();
        assert_eq!(train.hidden_size, 16);
        assert_eq!(train.seq_len, 64);
        assert!(!train.augmentation.enabled);
        assert_eq!(train.learning_rate, 0.001); // default kept
    }

    #[test]
    fn missing_required_key_is_named() {
        let file = ConfigFile::parse("[sim]\nseed = 1\n[channel.1]\nrated_power = 50\n").unwrap();
        match sim_config(&file) {
            Err(Error::Config(msg)) => assert!(msg.contains("horizon"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_is_reported_with_location() {
        let file = ConfigFile::parse("[sim]\nhorizon = soon\n[channel.1]\nrated_power = 50\n")
            .unwrap();
        match sim_config(&file) {
            Err(Error::Config(msg)) => assert!(msg.contains("horizon = soon"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn channel_gaps_rejected() {
        let file =
            ConfigFile::parse("[sim]\nhorizon = 100\n[channel.1]\nrated_power = 50\n[channel.3]\nrated_power = 10\n")
                .unwrap();
        assert!(matches!(sim_config(&file), Err(Error::Config(_))));
    }

    #[test]
    fn split_fractions_parse() {
        let file = ConfigFile::parse("[split]\nfractions = 0.81, 0.076, 0.114\n").unwrap();
        match split_source(&file).unwrap() {
            SplitSource::Fractions(f) => assert_eq!(f, [0.81, 0.076, 0.114]),
            _ => panic!("expected fractions"),
        }
    }

    #[test]
    fn split_intervals_parse() {
        let text = "[split]\ntrain = 0..100, 200..300\nval = 100..150\ntest = 150..200\n";
        let file = ConfigFile::parse(text).unwrap();
        match split_source(&file).unwrap() {
            SplitSource::Explicit(spec) => {
                assert_eq!(spec.train_intervals, vec![(0.0, 100.0), (200.0, 300.0)]);
                assert_eq!(spec.test_intervals, vec![(150.0, 200.0)]);
            }
            _ => panic!("expected explicit intervals"),
        }
    }

    #[test]
    fn keys_outside_sections_are_rejected() {
        assert!(matches!(
            ConfigFile::parse("loose = 1\n"),
            Err(Error::Config(_))
        ));
    }
}
