//! Deterministic synthetic generator for the bench testbed: three identical
//! induction motors plus one series-bulb lighting line behind a single main
//! feed, sampled at a jittered ~5 s cadence with sensor noise and occasional
//! spurious main-current readings.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DatasetMeta, LineReading, Sample};
use crate::digest::fnv1a64_hex;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_SAMPLE_INTERVAL: f64 = 5.0;
pub const DEFAULT_MAINS_VOLTAGE: f64 = 220.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKind {
    InductionMotor,
    Resistive,
}

/// Parametric electrical behavior of one appliance line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadModel {
    pub name: String,
    pub kind: LoadKind,
    /// Steady-state active power, watts.
    pub rated_power: f64,
    /// Start-up peak as a multiple of rated power (motors only).
    pub inrush_multiplier: f64,
    /// Seconds over which the start-up transient decays (motors only).
    pub inrush_duration: f64,
    /// Sigma of the load's own steady-state power fluctuation, watts.
    pub steady_noise_sigma: f64,
    pub power_factor: f64,
}

impl LoadModel {
    pub fn motor(name: &str, rated_power: f64) -> Self {
        LoadModel {
            name: name.to_string(),
            kind: LoadKind::InductionMotor,
            rated_power,
            inrush_multiplier: 3.0,
            inrush_duration: 2.0,
            steady_noise_sigma: 0.0,
            power_factor: 0.8,
        }
    }

    pub fn resistive(name: &str, rated_power: f64) -> Self {
        LoadModel {
            name: name.to_string(),
            kind: LoadKind::Resistive,
            rated_power,
            inrush_multiplier: 1.0,
            inrush_duration: 0.0,
            steady_noise_sigma: 0.0,
            power_factor: 1.0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.steady_noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rated_power <= 0.0 {
            return Err(Error::Config(format!(
                "load `{}`: rated_power must be > 0",
                self.name
            )));
        }
        if self.steady_noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "load `{}`: steady_noise_sigma must be >= 0",
                self.name
            )));
        }
        if self.inrush_multiplier < 1.0 || self.inrush_duration < 0.0 {
            return Err(Error::Config(format!(
                "load `{}`: inrush_multiplier must be >= 1 and inrush_duration >= 0",
                self.name
            )));
        }
        if self.kind == LoadKind::Resistive
            && (self.inrush_multiplier != 1.0 || self.inrush_duration != 0.0)
        {
            return Err(Error::Config(format!(
                "load `{}`: resistive loads have no inrush transient",
                self.name
            )));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Config(format!(
                "load `{}`: power_factor must be in (0, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// Per-channel ON intervals over a horizon. Intervals are half-open
/// `[on_time, off_time)`, non-overlapping and strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: f64,
    pub channels: Vec<Vec<(f64, f64)>>,
}

impl Schedule {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (c, intervals) in self.channels.iter().enumerate() {
            let mut prev_end = 0.0f64;
            for (k, &(on, off)) in intervals.iter().enumerate() {
                if off <= on {
                    return Err(Error::Config(format!(
                        "channel {c} interval {k}: off {off} <= on {on}"
                    )));
                }
                if on < 0.0 || off > self.horizon {
                    return Err(Error::Config(format!(
                        "channel {c} interval {k}: [{on}, {off}) outside [0, {}]",
                        self.horizon
                    )));
                }
                if k > 0 && on < prev_end {
                    return Err(Error::Config(format!(
                        "channel {c} interval {k} overlaps its predecessor"
                    )));
                }
                prev_end = off;
            }
        }
        Ok(())
    }

    /// ON interval covering `t`, if any, as (on_time, off_time).
    pub fn active_interval(&self, channel: usize, t: f64) -> Option<(f64, f64)> {
        self.channels[channel]
            .iter()
            .take_while(|&&(on, _)| on <= t)
            .find(|&&(on, off)| t >= on && t < off)
            .copied()
    }

    /// Joint ON/OFF state as a bitmask (bit c = channel c ON).
    pub fn state_mask(&self, t: f64) -> u32 {
        let mut mask = 0u32;
        for c in 0..self.channels.len() {
            if self.active_interval(c, t).is_some() {
                mask |= 1 << c;
            }
        }
        mask
    }
}

/// Builds a schedule in which every one of the `2^n_channels` joint ON/OFF
/// combinations holds for at least one dwell period, followed by random
/// combinations until the horizon is exhausted. Dwell lengths are exponential
/// with the given mean, clamped to `[2 * sample interval, horizon / 4]`.
pub fn generate_schedule(
    seed: u64,
    n_channels: usize,
    horizon: f64,
    mean_dwell: f64,
) -> Result<Schedule> {
    if n_channels == 0 {
        return Err(Error::Config("n_channels must be >= 1".to_string()));
    }
    if n_channels > 20 {
        return Err(Error::Config(format!(
            "n_channels = {n_channels} would require {} joint combinations",
            1u64 << n_channels
        )));
    }
    if mean_dwell <= 0.0 || horizon <= 0.0 {
        return Err(Error::Config("horizon and mean_dwell must be > 0".to_string()));
    }
    let n_combos = 1usize << n_channels;
    if horizon < n_combos as f64 * mean_dwell {
        return Err(Error::Config(format!(
            "horizon {horizon} s too short to cover all {n_combos} combinations \
             at mean dwell {mean_dwell} s (need at least {})",
            n_combos as f64 * mean_dwell
        )));
    }

    let mut rng = Rng::new(seed);
    let dwell_lo = 2.0 * DEFAULT_SAMPLE_INTERVAL;
    let dwell_hi = horizon / 4.0;
    let draw_dwell = |rng: &mut Rng| rng.exponential(mean_dwell).clamp(dwell_lo, dwell_hi);

    // Visit every joint combination once, in a seeded random order, then keep
    // drawing random combinations to fill the horizon.
    let mut combos: Vec<u32> = (0..n_combos as u32).collect();
    rng.shuffle(&mut combos);

    let mut timeline: Vec<(f64, f64, u32)> = Vec::new();
    let mut t = 0.0f64;
    for &mask in &combos {
        let dwell = draw_dwell(&mut rng);
        if t + dwell > horizon {
            return Err(Error::Config(format!(
                "horizon {horizon} s too short: ran out of room after {} of {n_combos} \
                 combinations (at t = {t:.1} s); increase the horizon or reduce mean_dwell",
                timeline.len()
            )));
        }
        timeline.push((t, t + dwell, mask));
        t += dwell;
    }
    while t < horizon {
        let mask = (rng.next_u64() % n_combos as u64) as u32;
        let dwell = draw_dwell(&mut rng).min(horizon - t);
        timeline.push((t, t + dwell, mask));
        t += dwell;
    }

    // Convert the joint-state timeline into per-channel ON intervals.
    let mut channels: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_channels];
    for c in 0..n_channels {
        let bit = 1u32 << c;
        let mut current: Option<(f64, f64)> = None;
        for &(start, end, mask) in &timeline {
            if mask & bit != 0 {
                current = match current {
                    Some((s, e)) if (e - start).abs() < 1e-9 => Some((s, end)),
                    Some(done) => {
                        channels[c].push(done);
                        Some((start, end))
                    }
                    None => Some((start, end)),
                };
            } else if let Some(done) = current.take() {
                channels[c].push(done);
            }
        }
        if let Some(done) = current {
            channels[c].push(done);
        }
    }

    let schedule = Schedule { horizon, channels };
    schedule.validate()?;
    Ok(schedule)
}

/// Noise-free instantaneous power of a load `t_since_on` seconds after
/// switch-on. Motors start at `rated * inrush_multiplier` and decay
/// exponentially to rated with time constant `inrush_duration / 3`.
pub fn instantaneous_power(load: &LoadModel, t_since_on: f64) -> f64 {
    debug_assert!(t_since_on >= 0.0);
    match load.kind {
        LoadKind::Resistive => load.rated_power,
        LoadKind::InductionMotor => {
            if load.inrush_duration <= 0.0 || load.inrush_multiplier <= 1.0 {
                return load.rated_power;
            }
            let tau = load.inrush_duration / 3.0;
            let excess = (load.inrush_multiplier - 1.0) * (-t_since_on / tau).exp();
            load.rated_power * (1.0 + excess)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Simulated span, seconds.
    pub horizon: f64,
    pub sample_interval_mean: f64,
    pub sample_interval_jitter_sigma: f64,
    pub mains_voltage_nominal: f64,
    pub voltage_noise_sigma: f64,
    pub current_noise_sigma: f64,
    /// Probability per sample that the main current reading is garbage.
    pub spurious_rate: f64,
    pub channels: Vec<LoadModel>,
}

impl SimConfig {
    /// Noise-free config over the given loads.
    pub fn noise_free(seed: u64, horizon: f64, channels: Vec<LoadModel>) -> Self {
        SimConfig {
            seed,
            horizon,
            sample_interval_mean: DEFAULT_SAMPLE_INTERVAL,
            sample_interval_jitter_sigma: 0.0,
            mains_voltage_nominal: DEFAULT_MAINS_VOLTAGE,
            voltage_noise_sigma: 0.0,
            current_noise_sigma: 0.0,
            spurious_rate: 0.0,
            channels,
        }
    }

    /// The bench testbed: three identical 50 W motors and a 7.5 W series-bulb
    /// lighting line, with sensor noise levels that produce visibly imperfect
    /// readings.
    pub fn bench_testbed(seed: u64, horizon: f64) -> Self {
        SimConfig {
            seed,
            horizon,
            sample_interval_mean: DEFAULT_SAMPLE_INTERVAL,
            sample_interval_jitter_sigma: 0.8,
            mains_voltage_nominal: DEFAULT_MAINS_VOLTAGE,
            voltage_noise_sigma: 1.0,
            current_noise_sigma: 0.02,
            spurious_rate: 0.002,
            channels: vec![
                LoadModel::motor("M1", 50.0).with_noise(0.5),
                LoadModel::motor("M2", 50.0).with_noise(0.5),
                LoadModel::motor("M3", 50.0).with_noise(0.5),
                LoadModel::resistive("M4", 7.5).with_noise(0.2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_interval_mean <= 0.0 {
            return Err(Error::Config("sample_interval_mean must be > 0".to_string()));
        }
        if self.sample_interval_jitter_sigma < 0.0
            || self.sample_interval_jitter_sigma >= self.sample_interval_mean / 3.0
        {
            return Err(Error::Config(format!(
                "sample_interval_jitter_sigma must be in [0, mean/3) = [0, {})",
                self.sample_interval_mean / 3.0
            )));
        }
        if !(0.0..1.0).contains(&self.spurious_rate) {
            return Err(Error::Config("spurious_rate must be in [0, 1)".to_string()));
        }
        if self.mains_voltage_nominal <= 0.0 {
            return Err(Error::Config("mains_voltage_nominal must be > 0".to_string()));
        }
        if self.voltage_noise_sigma < 0.0 || self.current_noise_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be >= 0".to_string()));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("at least one channel is required".to_string()));
        }
        for load in &self.channels {
            load.validate()?;
        }
        if self.horizon <= 0.0 {
            return Err(Error::Config("horizon must be > 0".to_string()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a64_hex(json.as_bytes())
    }
}

/// Runs the simulation. Readings model RMS sensors: measurement noise is
/// added to every reported voltage and current (folded at zero, since RMS
/// magnitudes cannot go negative) and reported power is recomputed from the
/// noisy V * I * pf. When no noise is drawn the true values pass through
/// untouched, so noise-free runs conserve power bit-exactly.
pub fn simulate(config: &SimConfig, schedule: &Schedule) -> Result<Dataset> {
    config.validate()?;
    schedule.validate()?;
    if schedule.n_channels() != config.channels.len() {
        return Err(Error::Config(format!(
            "schedule has {} channels but config has {}",
            schedule.n_channels(),
            config.channels.len()
        )));
    }

    let mut rng = Rng::new(config.seed);
    let v_nom = config.mains_voltage_nominal;
    let sigma_v = config.voltage_noise_sigma;
    let sigma_i = config.current_noise_sigma;
    let noisy = sigma_v > 0.0 || sigma_i > 0.0;
    let max_plausible_current: f64 = config
        .channels
        .iter()
        .map(|l| l.rated_power * l.inrush_multiplier / (v_nom * l.power_factor))
        .sum();

    // RMS sensor reading: additive Gaussian noise folded at zero.
    let measure = |true_value: f64, sigma: f64, rng: &mut Rng| -> f64 {
        (true_value + sigma * rng.normal()).abs()
    };

    let mut samples = Vec::new();
    let mut t = 0.0f64;
    let min_gap = 0.1 * config.sample_interval_mean;
    while t <= config.horizon {
        let mut lines = Vec::with_capacity(config.channels.len());
        let mut main_p_true = 0.0f64;
        let mut main_i_true = 0.0f64;
        for (c, load) in config.channels.iter().enumerate() {
            let p_true = match schedule.active_interval(c, t) {
                Some((on, _)) => {
                    instantaneous_power(load, t - on)
                        + load.steady_noise_sigma * rng.normal()
                }
                None => 0.0,
            };
            let i_true = p_true / (v_nom * load.power_factor);
            main_p_true += p_true;
            main_i_true += i_true;
            let (v, i, p) = if noisy {
                let v = measure(v_nom, sigma_v, &mut rng);
                let i = measure(i_true, sigma_i, &mut rng);
                (v, i, v * i * load.power_factor)
            } else {
                (v_nom, i_true, p_true)
            };
            lines.push(LineReading { v, i, p });
        }

        let main_pf = if main_i_true > 0.0 {
            main_p_true / (v_nom * main_i_true)
        } else {
            1.0
        };
        let spurious = config.spurious_rate > 0.0 && rng.uniform() < config.spurious_rate;
        let (main_v, main_i, main_p) = if spurious {
            let v = if noisy {
                measure(v_nom, sigma_v, &mut rng)
            } else {
                v_nom
            };
            let i = rng.range(0.0, 2.0 * max_plausible_current);
            (v, i, v * i * main_pf)
        } else if noisy {
            let v = measure(v_nom, sigma_v, &mut rng);
            let i = measure(main_i_true, sigma_i, &mut rng);
            (v, i, v * i * main_pf)
        } else {
            (v_nom, main_i_true, main_p_true)
        };

        samples.push(Sample {
            timestamp: t,
            main_v,
            main_i,
            main_p,
            lines,
            spurious,
        });

        let gap = config.sample_interval_mean
            + config.sample_interval_jitter_sigma * rng.normal();
        t += gap.max(min_gap);
    }

    let meta = DatasetMeta {
        channel_names: config.channels.iter().map(|l| l.name.clone()).collect(),
        channel_rated_powers: config.channels.iter().map(|l| l.rated_power).collect(),
        seed: config.seed,
        config_digest: config.digest(),
    };
    Dataset::new(samples, meta)
}
