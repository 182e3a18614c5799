//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Run with
//! `cargo test --test acceptance -- --nocapture`.

use std::net::TcpListener;

use std::time::{Duration, Instant};

use nilm_workbench::baseline::{match_states, SignatureLibrary};
use nilm_workbench::dataio::{align_to_grid, split_by_time, write_csv, SplitSpec};
use nilm_workbench::metrics::{
    compare_reports, f1, mae, nde, round_dp, sae, ApplianceMetrics, ConfusionCounts, MetricReport,
    SubHorizonSpec,
};
use nilm_workbench::net::{
    self, batch_infer, gradient_check, init_model, predict_series, predict_series_with_prob,
    save_model, AugmentationConfig, TrainConfig,
};
use nilm_workbench::rng::Rng;
use nilm_workbench::rt::{
    self, source::SourceConfig, store::read_store, store::StoreConfig, Pace, RunOptions,
    StopHandle,
};
use nilm_workbench::sim::{
    generate_schedule, simulate, LoadModel, Schedule, SimConfig,
};

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// The training- and latency-heavy criteria share two cores; serializing them
/// keeps the timing-sensitive measurements honest.
static HEAVY: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn heavy_guard() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Per-channel alternating ON/OFF schedule with channel-specific dwell means,
/// emulating loads operated independently at varying times.
fn usage_schedule(seed: u64, horizon: f64, dwells: &[(f64, f64)]) -> Schedule {
    let mut rng = Rng::new(seed);
    let channels = dwells
        .iter()
        .map(|&(mean_on, mean_off)| {
            let mut intervals = Vec::new();
            let mut t = rng.exponential(mean_off);
            while t < horizon {
                let on_len = rng.exponential(mean_on).clamp(15.0, horizon / 4.0);
                let end = (t + on_len).min(horizon);
                intervals.push((t, end));
                t = end + rng.exponential(mean_off).clamp(15.0, horizon / 4.0);
            }
            intervals
        })
        .collect();
    let schedule = Schedule { horizon, channels };
    schedule.validate().unwrap();
    schedule
}

fn table2_report() -> MetricReport {
    published_report(
        [8.79, 9.83, 12.68, 6.20],
        [8.65, 9.77, 10.48, 5.69],
        [0.79, 0.79, 0.68, 0.66],
        [0.63, 0.86, 0.73, 0.76],
    )
}

fn table3_report() -> MetricReport {
    published_report(
        [6.93, 25.51, 10.55, 10.74],
        [5.81, 21.40, 8.85, 9.01],
        [0.87, 0.82, 0.90, 0.69],
        [0.47, 0.68, 0.51, 0.70],
    )
}

fn published_report(mae: [f64; 4], sae: [f64; 4], f1: [f64; 4], nde: [f64; 4]) -> MetricReport {
    MetricReport::from_rows(
        (0..4)
            .map(|k| ApplianceMetrics {
                name: format!("M{}", k + 1),
                mae: mae[k],
                sae_watts: sae[k],
                sae_relative_pct: Some(sae[k]),
                f1: f1[k],
                nde: Some(nde[k]),
                confusion: ConfusionCounts::default(),
            })
            .collect(),
    )
    .unwrap()
}

fn budget(name: &str, started: Instant, limit_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_s,
        "{name} took {elapsed:.1} s, budget {limit_s} s"
    );
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------------

fn mae_oracle(y: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in 0..y.len() {
        let d = y[t] - p[t];
        total += if d < 0.0 { -d } else { d };
    }
    total / y.len() as f64
}

fn sae_oracle(y: &[f64], p: &[f64], m: usize) -> f64 {
    let s = y.len() / m;
    let mut total = 0.0;
    for tau in 0..s {
        let mut y_tau = 0.0;
        let mut p_tau = 0.0;
        for t in 0..m {
            y_tau += y[tau * m + t];
            p_tau += p[tau * m + t];
        }
        total += (y_tau - p_tau).abs() / m as f64;
    }
    total / s as f64
}

fn f1_oracle(y: &[f64], p: &[f64], thr: f64) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for t in 0..y.len() {
        match (y[t] > thr, p[t] > thr) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fnn += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fnn);
    2.0 * precision * recall / (precision + recall)
}

fn nde_oracle(y: &[f64], p: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..y.len() {
        num += (y[t] - p[t]) * (y[t] - p[t]);
        den += y[t] * y[t];
    }
    num.sqrt() / den.sqrt()
}

#[test]
fn acceptance_1_metric_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = Rng::new(1001);
    let len = 1000;
    let m = 50;
    let spec = SubHorizonSpec::new(m).unwrap();
    for case in 0..1000 {
        // 4 appliance series per case.
        let appliance = case % 4;
        let scale = [60.0, 55.0, 50.0, 9.0][appliance];
        let y: Vec<f64> = (0..len).map(|_| rng.range(0.0, scale)).collect();
        let p: Vec<f64> = (0..len).map(|_| rng.range(0.0, scale)).collect();
        assert!((mae(&y, &p).unwrap() - mae_oracle(&y, &p)).abs() < 1e-12);
        assert!((sae(&y, &p, &spec).unwrap().absolute - sae_oracle(&y, &p, m)).abs() < 1e-12);
        assert!((f1(&y, &p, 5.0).unwrap().0 - f1_oracle(&y, &p, 5.0)).abs() < 1e-12);
        assert!((nde(&y, &p).unwrap().unwrap() - nde_oracle(&y, &p)).abs() < 1e-12);

        // Trivial identities hold exactly.
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(sae(&y, &y, &spec).unwrap().absolute, 0.0);
        assert_eq!(f1(&y, &y, 5.0).unwrap().0, 1.0);
        assert_eq!(nde(&y, &y).unwrap(), Some(0.0));
        let zeros = vec![0.0; len];
        assert_eq!(nde(&y, &zeros).unwrap(), Some(1.0));
    }
    budget("criterion 1", started, 10.0);
    println!(
        "ACCEPTANCE 1 PASS: mae/sae/f1/nde match brute-force oracles on 1000 cases \
         within 1e-12 ({:.2} s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 2. Report fixture
// ---------------------------------------------------------------------------

#[test]
fn acceptance_2_report_fixture() {
    let started = Instant::now();
    let before = table2_report();
    assert_eq!(round_dp(before.avg_mae, 2), 9.38);
    assert_eq!(round_dp(before.avg_sae_relative_pct.unwrap(), 2), 8.65);
    assert_eq!(round_dp(before.avg_f1, 2), 0.73);
    assert_eq!(round_dp(before.avg_nde.unwrap(), 2), 0.75);
    let text = before.render_text();
    for value in ["9.38", "8.65", "0.73", "0.75"] {
        assert!(text.contains(value), "rendered table missing {value}:\n{text}");
    }

    let after = table3_report();
    let drift = compare_reports(&before, &after).unwrap();
    assert!(drift.get("Avg", "mae").unwrap().delta > 0.0, "MAE drifts up");
    assert!(drift.get("Avg", "sae").unwrap().delta > 0.0, "SAE drifts up");
    assert!(drift.get("Avg", "f1").unwrap().delta > 0.0, "F1 drifts up");
    assert!(drift.get("Avg", "nde").unwrap().delta < 0.0, "NDE drifts down");
    budget("criterion 2", started, 1.0);
    println!(
        "ACCEPTANCE 2 PASS: published averages reproduce (9.38/8.65/0.73/0.75) and \
         drift directions match ({:.3} s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn acceptance_3_gradient_correctness() {
    let started = Instant::now();
    let cfg = TrainConfig {
        hidden_size: 8,
        n_heads: 2,
        seq_len: 16,
        n_appliances: 2,
        dropout: 0.0,
        seed: 5,
        augmentation: AugmentationConfig::disabled(),
        ..TrainConfig::default()
    };
    let report = gradient_check(&cfg, 1e-4).unwrap();
    for (group, err) in &report.per_group {
        assert!(*err < 1e-3, "parameter group {group}: relative error {err}");
    }
    budget("criterion 3", started, 60.0);
    println!(
        "ACCEPTANCE 3 PASS: analytic vs central-difference gradients, max relative \
         error {:.2e} over {} parameter groups ({:.1} s)",
        report.max_rel_error,
        report.per_group.len(),
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 4. Learnability
// ---------------------------------------------------------------------------

#[test]
fn acceptance_4_learnability() {
    let _guard = heavy_guard();
    let started = Instant::now();
    // 2-appliance, 2000-sample, zero-noise set with distinct 50 / 7.5 W loads.
    let mut motor = LoadModel::motor("M1", 50.0);
    motor.inrush_multiplier = 1.0;
    motor.inrush_duration = 0.0;
    let loads = vec![motor, LoadModel::resistive("M2", 7.5)];
    let horizon = 2000.0 * 5.0 + 50.0;
    let config = SimConfig::noise_free(21, horizon, loads);
    let schedule = generate_schedule(21, 2, horizon, 60.0).unwrap();
    let mut ds = simulate(&config, &schedule).unwrap();
    ds.samples.truncate(2000);
    let ds = align_to_grid(&ds, 5.0).unwrap();
    assert_eq!(ds.len(), 2000);

    let cfg = TrainConfig {
        hidden_size: 64,
        n_heads: 4,
        seq_len: 64,
        n_appliances: 2,
        batch_size: 2,
        learning_rate: 0.01,
        dropout: 0.0,
        epochs: 200,
        seed: 3,
        lambda_cls: 2.0,
        augmentation: AugmentationConfig::disabled(),
        ..TrainConfig::default()
    };
    // Overfit oracle: validate on the training set itself.
    let (params, history) = net::train(&ds, &ds, &cfg).unwrap();
    assert!(history.epochs.len() <= 200);

    let (power, prob) = predict_series_with_prob(&params, &ds).unwrap();
    let mut maes = Vec::new();
    let mut f1s = Vec::new();
    for a in 0..2 {
        let actual = ds.channel_power(a);
        maes.push(mae(&actual, &power[a]).unwrap());
        // State detection comes from the classification head; map its ON/OFF
        // decision onto the power threshold scale for the F1 computation.
        let state_pred: Vec<f64> = prob[a]
            .iter()
            .map(|&p| if p > 0.5 { 2.0 * cfg.on_threshold } else { 0.0 })
            .collect();
        f1s.push(f1(&actual, &state_pred, cfg.on_threshold).unwrap().0);
    }
    for (a, (m, f)) in maes.iter().zip(&f1s).enumerate() {
        assert!(*m < 2.0, "appliance {a}: train-set MAE {m:.3} W >= 2 W");
        assert!(*f > 0.95, "appliance {a}: state F1 {f:.4} <= 0.95");
    }

    // Zero aggregate means everything OFF: the trained model's mean predicted
    // power on an idle window stays below the ON threshold.
    let idle: Vec<f64> = (0..cfg.seq_len).flat_map(|_| [0.0, 220.0, 0.0]).collect();
    let idle_window = net::Tensor::new(vec![cfg.seq_len, 3], idle);
    let (idle_power, _) = net::forward(&params, &idle_window, false).unwrap();
    let idle_mean = idle_power.data.iter().sum::<f64>() / idle_power.data.len() as f64;
    assert!(
        idle_mean < cfg.on_threshold,
        "idle window mean prediction {idle_mean:.2} W"
    );
    budget("criterion 4", started, 300.0);
    println!(
        "ACCEPTANCE 4 PASS: train-set MAE [{:.2}, {:.2}] W < 2 W and state F1 \
         [{:.3}, {:.3}] > 0.95 within {} epochs ({:.0} s)",
        maes[0],
        maes[1],
        f1s[0],
        f1s[1],
        history.epochs.len(),
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 5. Identical-load confusion trend
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_identical_load_confusion_trend() {
    let _guard = heavy_guard();
    let started = Instant::now();
    // Three identical 50 W motors plus the 7.5 W lighting line, bench noise,
    // loads operated with per-channel usage rhythms.
    let horizon = 21_000.0 * 5.0;
    let mut config = SimConfig::bench_testbed(31, horizon);
    config.spurious_rate = 0.0;
    let schedule = usage_schedule(
        77,
        horizon,
        &[(600.0, 900.0), (300.0, 450.0), (120.0, 180.0), (400.0, 600.0)],
    );
    let ds = simulate(&config, &schedule).unwrap();
    assert!(ds.len() >= 20_000, "need at least 20k samples, got {}", ds.len());
    let ds = align_to_grid(&ds, 5.0).unwrap();
    let spec = SplitSpec::by_fractions(&ds, [0.7, 0.1, 0.2]).unwrap();
    let parts = split_by_time(&ds, &spec).unwrap();

    let cfg = TrainConfig {
        hidden_size: 32,
        n_heads: 4,
        seq_len: 128,
        n_appliances: 4,
        batch_size: 16,
        learning_rate: 0.005,
        dropout: 0.1,
        epochs: 10,
        seed: 9,
        augmentation: AugmentationConfig {
            enabled: true,
            recombination_prob: 0.3,
            time_shift_max: 16,
            amplitude_jitter_sigma: 0.02,
        },
        ..TrainConfig::default()
    };
    let (params, _) = net::train(&parts.train, &parts.val, &cfg).unwrap();

    let test = &parts.test;
    let predicted = predict_series(&params, test).unwrap();
    let actual: Vec<Vec<f64>> = (0..4).map(|a| test.channel_power(a)).collect();
    let thr = cfg.on_threshold;

    // Motor-channel MAE bucketed by the number of motors simultaneously ON.
    let mut bucket_err = [0.0f64; 4];
    let mut bucket_n = [0usize; 4];
    for t in 0..test.len() {
        let k = (0..3).filter(|&a| actual[a][t] > thr).count();
        for a in 0..3 {
            bucket_err[k] += (predicted[a][t] - actual[a][t]).abs();
        }
        bucket_n[k] += 1;
    }
    assert!(bucket_n[1] >= 50 && bucket_n[2] + bucket_n[3] >= 50);
    let mae_k1 = bucket_err[1] / (3 * bucket_n[1]) as f64;
    let mae_concurrent =
        (bucket_err[2] + bucket_err[3]) / (3 * (bucket_n[2] + bucket_n[3])) as f64;
    assert!(
        mae_concurrent > mae_k1,
        "concurrency did not degrade motor MAE: k=1 {mae_k1:.2} W vs k>=2 {mae_concurrent:.2} W"
    );

    // OFF-state predictions are more accurate than ON-state, per motor.
    let mut on_off = Vec::new();
    for a in 0..3 {
        let (mut on_e, mut on_n, mut off_e, mut off_n) = (0.0, 0usize, 0.0, 0usize);
        for t in 0..test.len() {
            let e = (predicted[a][t] - actual[a][t]).abs();
            if actual[a][t] > thr {
                on_e += e;
                on_n += 1;
            } else {
                off_e += e;
                off_n += 1;
            }
        }
        let on_mae = on_e / on_n.max(1) as f64;
        let off_mae = off_e / off_n.max(1) as f64;
        assert!(
            off_mae < on_mae,
            "motor { }: OFF MAE {off_mae:.2} W not below ON MAE {on_mae:.2} W",
            a + 1
        );
        on_off.push((on_mae, off_mae));
    }
    budget("criterion 5", started, 1800.0);
    println!(
        "ACCEPTANCE 5 PASS: motor MAE k=1 {:.2} W < k>=2 {:.2} W; OFF<ON per motor \
         ({:?}) ({:.0} s)",
        mae_k1,
        mae_concurrent,
        on_off
            .iter()
            .map(|(on, off)| format!("{off:.1}<{on:.1}"))
            .collect::<Vec<_>>(),
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 6. Simulator conservation
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_simulator_conservation() {
    let started = Instant::now();
    // Zero-noise: aggregate equals the channel sum exactly.
    let config = SimConfig::noise_free(
        61,
        30_000.0,
        vec![
            LoadModel::motor("M1", 50.0),
            LoadModel::motor("M2", 50.0),
            LoadModel::motor("M3", 50.0),
            LoadModel::resistive("M4", 7.5),
        ],
    );
    let schedule = generate_schedule(61, 4, 30_000.0, 300.0).unwrap();
    let ds = simulate(&config, &schedule).unwrap();
    for s in &ds.samples {
        let sum: f64 = s.lines.iter().map(|l| l.p).sum();
        assert_eq!(s.main_p, sum, "zero-noise conservation at t={}", s.timestamp);
    }

    // Noisy: residual within 3 sigma (propagated through V*I) for >= 99% of
    // non-spurious samples over 100k samples.
    let horizon = 100_500.0 * 5.0;
    let config = SimConfig::bench_testbed(62, horizon);
    let schedule = generate_schedule(62, 4, horizon, 600.0).unwrap();
    let ds = simulate(&config, &schedule).unwrap();
    assert!(ds.len() >= 100_000, "got {} samples", ds.len());
    let v = config.mains_voltage_nominal;
    let sv = config.voltage_noise_sigma;
    let si = config.current_noise_sigma;
    let pf: Vec<f64> = config.channels.iter().map(|l| l.power_factor).collect();
    let mut within = 0usize;
    let mut total = 0usize;
    for s in &ds.samples {
        if s.spurious {
            continue;
        }
        total += 1;
        let line_sum: f64 = s.lines.iter().map(|l| l.p).sum();
        let residual = (s.main_p - line_sum).abs();
        // Per-line and main-line power noise: sigma_p ~= pf * sqrt(V^2 si^2 + I^2 sv^2).
        let mut var = v * v * si * si + s.main_i * s.main_i * sv * sv;
        for (l, pf_l) in s.lines.iter().zip(&pf) {
            var += pf_l * pf_l * (v * v * si * si + l.i * l.i * sv * sv);
        }
        if residual <= 3.0 * var.sqrt() {
            within += 1;
        }
    }
    let fraction = within as f64 / total as f64;
    assert!(
        fraction >= 0.99,
        "only {:.3}% of {total} non-spurious samples within 3 sigma",
        100.0 * fraction
    );
    budget("criterion 6", started, 30.0);
    println!(
        "ACCEPTANCE 6 PASS: zero-noise aggregate exact; noisy residual within 3 sigma \
         for {:.2}% of {} samples ({:.1} s)",
        100.0 * fraction,
        total,
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 7. Baseline exactness
// ---------------------------------------------------------------------------

/// True joint states at each sample time; a sample is steady-state when its
/// joint state matches a neighboring sample (not a one-sample dwell).
fn true_states(schedule: &Schedule, ds: &nilm_workbench::dataio::Dataset) -> Vec<u32> {
    ds.samples
        .iter()
        .map(|s| schedule.state_mask(s.timestamp))
        .collect()
}

fn steady(mask: &[u32], t: usize) -> bool {
    (t > 0 && mask[t] == mask[t - 1]) || (t + 1 < mask.len() && mask[t] == mask[t + 1])
}

#[test]
fn acceptance_7_baseline_exactness() {
    let started = Instant::now();
    // Distinct (superincreasing) powers: exact state recovery everywhere.
    let config = SimConfig::noise_free(
        71,
        40_000.0,
        vec![
            LoadModel::motor("A", 50.0),
            LoadModel::motor("B", 24.0),
            LoadModel::motor("C", 11.0),
            LoadModel::resistive("D", 5.0),
        ],
    );
    // No inrush transients, so steady-state matching sees clean levels.
    let mut config = config;
    for load in config.channels.iter_mut() {
        load.inrush_multiplier = 1.0;
        load.inrush_duration = 0.0;
    }
    let schedule = generate_schedule(71, 4, 40_000.0, 300.0).unwrap();
    let ds = simulate(&config, &schedule).unwrap();
    let lib = SignatureLibrary::new(
        config.channels.iter().map(|l| l.name.clone()).collect(),
        vec![50.0, 24.0, 11.0, 5.0],
        2.0,
    )
    .unwrap();
    let main_power: Vec<f64> = ds.samples.iter().map(|s| s.main_p).collect();
    let states = match_states(&main_power, &lib).unwrap();
    let truth = true_states(&schedule, &ds);
    let mut checked = 0usize;
    for t in 0..ds.len() {
        if !steady(&truth, t) {
            continue;
        }
        checked += 1;
        let mask: u32 = states[t]
            .iter()
            .enumerate()
            .map(|(c, &on)| (on as u32) << c)
            .sum();
        assert_eq!(
            mask, truth[t],
            "distinct-power recovery failed at sample {t} (t={})",
            ds.samples[t].timestamp
        );
    }
    assert!(checked > 5000);

    // Identical motors: the ON-count is recovered even though identity is
    // inherently ambiguous.
    let mut config = SimConfig::noise_free(
        72,
        40_000.0,
        vec![
            LoadModel::motor("M1", 50.0),
            LoadModel::motor("M2", 50.0),
            LoadModel::motor("M3", 50.0),
            LoadModel::resistive("M4", 7.5),
        ],
    );
    for load in config.channels.iter_mut() {
        load.inrush_multiplier = 1.0;
        load.inrush_duration = 0.0;
    }
    let schedule = generate_schedule(72, 4, 40_000.0, 300.0).unwrap();
    let ds = simulate(&config, &schedule).unwrap();
    let lib = SignatureLibrary::new(
        vec!["M1".into(), "M2".into(), "M3".into(), "M4".into()],
        vec![50.0, 50.0, 50.0, 7.5],
        2.0,
    )
    .unwrap();
    let main_power: Vec<f64> = ds.samples.iter().map(|s| s.main_p).collect();
    let states = match_states(&main_power, &lib).unwrap();
    let truth = true_states(&schedule, &ds);
    let mut checked2 = 0usize;
    for t in 0..ds.len() {
        if !steady(&truth, t) {
            continue;
        }
        checked2 += 1;
        let predicted_motors = states[t][..3].iter().filter(|on| **on).count();
        let true_motors = (0..3).filter(|c| truth[t] & (1 << c) != 0).count();
        let predicted_bulb = states[t][3];
        let true_bulb = truth[t] & (1 << 3) != 0;
        assert_eq!(predicted_motors, true_motors, "motor count at sample {t}");
        assert_eq!(predicted_bulb, true_bulb, "bulb state at sample {t}");
    }
    assert!(checked2 > 5000);
    budget("criterion 7", started, 30.0);
    println!(
        "ACCEPTANCE 7 PASS: exact recovery at {checked} steady samples (distinct powers); \
         correct ON-count at {checked2} steady samples (identical motors) ({:.1} s)",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 8. Offline/online equivalence
// ---------------------------------------------------------------------------

#[test]
fn acceptance_8_offline_online_equivalence() {
    let _guard = heavy_guard();
    let started = Instant::now();
    // Full bench-scale model: hidden 64, 4 heads, sequence length 864, 4 loads.
    let cfg = TrainConfig::default();
    let mut params = init_model(&cfg).unwrap();
    params.norm.input_mean = vec![60.0, 220.0, 0.4];
    params.norm.input_sigma = vec![40.0, 2.0, 0.3];
    params.norm.power_scale = vec![20.0, 20.0, 20.0, 4.0];

    let horizon = 950.0 * 5.0;
    let mut sim_cfg = SimConfig::bench_testbed(81, horizon);
    // The replayed file is a cleaned test CSV: batch inference consumes rows
    // verbatim, so the stream must not contain spurious rows for the two
    // paths to see identical windows.
    sim_cfg.spurious_rate = 0.0;
    let schedule = generate_schedule(81, 4, horizon, 120.0).unwrap();
    let ds = simulate(&sim_cfg, &schedule).unwrap();
    let ds = align_to_grid(&ds, 5.0).unwrap();
    let n = ds.len();
    assert!(n > cfg.seq_len);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("replay.csv");
    write_csv(&ds, &csv).unwrap();
    let store_path = dir.path().join("live.jsonl");

    let stop = StopHandle::new();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let mut store_cfg = StoreConfig::for_path(&store_path);
    // Interval fsync keeps IO tail spikes out of the latency measurement;
    // crash consistency under per-record fsync is criterion 10's job.
    store_cfg.fsync = rt::FsyncPolicy::Interval(5.0);
    let summary = rt::run_with_listener(
        listener,
        &SourceConfig::Replay {
            path: csv,
            pace: Pace::MaxSpeed,
        },
        &params,
        &store_cfg,
        &RunOptions::default(),
        &stop,
    )
    .unwrap();

    assert_eq!(summary.predicted, n - (cfg.seq_len - 1), "record count");
    assert!(
        summary.p99_latency_ms < 500.0,
        "p99 latency {:.1} ms exceeds 500 ms",
        summary.p99_latency_ms
    );

    let records = read_store(&store_path).unwrap();
    let batch = batch_infer(&params, &ds).unwrap();
    assert_eq!(records.len(), batch.len());
    for (r, b) in records.iter().zip(&batch) {
        assert_eq!(r.timestamp, b.timestamp);
        for (x, y) in r.power.iter().zip(&b.power) {
            assert_eq!(x.to_bits(), y.to_bits(), "bitwise power at t={}", r.timestamp);
        }
        let on: Vec<bool> = b.on_prob.iter().map(|&p| p > 0.5).collect();
        assert_eq!(r.on, on);
    }
    budget("criterion 8", started, 600.0);
    println!(
        "ACCEPTANCE 8 PASS: {} streamed records bitwise-equal to batch inference, \
         p50 {:.0} ms, p99 {:.0} ms ({:.0} s)",
        records.len(),
        summary.p50_latency_ms,
        summary.p99_latency_ms,
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 9. Split fidelity
// ---------------------------------------------------------------------------

#[test]
fn acceptance_9_split_fidelity() {
    let started = Instant::now();
    let horizon = 181_200.0 * 5.0;
    let config = SimConfig::bench_testbed(91, horizon);
    let schedule = generate_schedule(91, 4, horizon, 900.0).unwrap();
    let mut ds = simulate(&config, &schedule).unwrap();
    assert!(ds.len() >= 180_631);
    ds.samples.truncate(180_631);

    let spec = SplitSpec::by_fractions(&ds, [0.810, 0.076, 0.114]).unwrap();
    let outcome = split_by_time(&ds, &spec).unwrap();
    let c = &outcome.counts;
    assert_eq!(c.train + c.val + c.test + c.dropped, 180_631);
    assert_eq!(c.dropped, 0);
    assert!((c.train_pct - 81.0).abs() < 0.1, "train {:.3}%", c.train_pct);
    assert!((c.val_pct - 7.6).abs() < 0.1, "val {:.3}%", c.val_pct);
    assert!((c.test_pct - 11.4).abs() < 0.1, "test {:.3}%", c.test_pct);
    budget("criterion 9", started, 30.0);
    println!(
        "ACCEPTANCE 9 PASS: 180,631 samples split {}/{}/{} = {:.1}%/{:.1}%/{:.1}% \
         ({:.1} s)",
        c.train,
        c.val,
        c.test,
        c.train_pct,
        c.val_pct,
        c.test_pct,
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 10. Persistence round trips
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_persistence_round_trips() {
    let _guard = heavy_guard();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // Model save/load bitwise identity at bench scale.
    let cfg = TrainConfig::default();
    let mut params = init_model(&cfg).unwrap();
    params.norm.input_mean = vec![60.0, 220.0, 0.4];
    params.norm.input_sigma = vec![40.0, 2.0, 0.3];
    params.norm.power_scale = vec![20.0, 20.0, 20.0, 4.0];
    let model_path = dir.path().join("model.bin");
    save_model(&params, &model_path).unwrap();
    let back = net::load_model(&model_path).unwrap();
    assert_eq!(params, back);

    // Dataset CSV round trip within 1e-6 relative (exact here).
    let sim_cfg = SimConfig::bench_testbed(101, 5_000.0);
    let schedule = generate_schedule(101, 4, 5_000.0, 300.0).unwrap();
    let ds = simulate(&sim_cfg, &schedule).unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&ds, &csv).unwrap();
    let (ds_back, _) = nilm_workbench::dataio::read_csv(&csv).unwrap();
    assert_eq!(ds.samples.len(), ds_back.samples.len());
    for (a, b) in ds.samples.iter().zip(&ds_back.samples) {
        let pairs = [
            (a.timestamp, b.timestamp),
            (a.main_v, b.main_v),
            (a.main_i, b.main_i),
            (a.main_p, b.main_p),
        ];
        for (x, y) in pairs {
            let rel = (x - y).abs() / x.abs().max(1.0);
            assert!(rel <= 1e-6);
        }
    }

    // Store survives a forced kill with zero torn records, 10 trials.
    // A small model keeps the spawned process writing at a high rate.
    let small_cfg = TrainConfig {
        hidden_size: 8,
        n_heads: 2,
        seq_len: 8,
        n_appliances: 4,
        seed: 1,
        augmentation: AugmentationConfig::disabled(),
        ..TrainConfig::default()
    };
    let small = init_model(&small_cfg).unwrap();
    let small_path = dir.path().join("small.bin");
    save_model(&small, &small_path).unwrap();
    let replay = dir.path().join("replay.csv");
    let sim_cfg = SimConfig::bench_testbed(102, 40_000.0);
    let schedule = generate_schedule(102, 4, 40_000.0, 300.0).unwrap();
    write_csv(&simulate(&sim_cfg, &schedule).unwrap(), &replay).unwrap();

    let exe = env!("CARGO_BIN_EXE_nilmw");
    let mut total_records = 0usize;
    for trial in 0..10 {
        let store = dir.path().join(format!("kill_{trial}.jsonl"));
        let mut child = std::process::Command::new(exe)
            .args([
                "serve",
                "--model",
                small_path.to_str().unwrap(),
                "--source",
                replay.to_str().unwrap(),
                "--store",
                store.to_str().unwrap(),
                "--port",
                "0",
                "--pace",
                "fixed:0.002",
            ])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap();
        std::thread::sleep(Duration::from_millis(400 + 60 * trial as u64));
        child.kill().unwrap();
        let _ = child.wait();

        // Every surviving line must be a complete, parseable record.
        let text = std::fs::read_to_string(&store).unwrap_or_default();
        if !text.is_empty() {
            assert!(
                text.ends_with('\n'),
                "trial {trial}: torn trailing record in {}",
                store.display()
            );
        }
        for (idx, line) in text.lines().enumerate() {
            let parsed: Result<nilm_workbench::rt::store::PredictionRecord, _> =
                serde_json::from_str(line);
            assert!(parsed.is_ok(), "trial {trial}: torn record at line {idx}: {line}");
            total_records += 1;
        }
    }
    assert!(
        total_records > 100,
        "kill trials wrote only {total_records} records; workload too light for the check"
    );
    budget("criterion 10", started, 120.0);
    println!(
        "ACCEPTANCE 10 PASS: model and CSV round trips exact; {} records across 10 \
         kill trials, zero torn ({:.0} s)",
        total_records,
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------

