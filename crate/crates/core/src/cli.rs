//! Command-line entry point binding the workbench modules into reproducible
//! workflows. Every subcommand writes a manifest beside its primary output,
//! including failed runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baseline;
use crate::chart::grouped_bar_chart;
use crate::config::{self, ConfigFile, SplitSource};
use crate::dataio::{self, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, RunManifest};
use crate::metrics::{
    breakdown_by_active_count, breakdown_by_state, compare_reports, MetricReport, SubHorizonSpec,
};
use crate::net;
use crate::rt::{self, source::SourceConfig, store::StoreConfig, FsyncPolicy, Pace, StopHandle};
use crate::sim;

const USAGE: &str = "\
nilmw - non-intrusive load monitoring workbench

USAGE:
  nilmw simulate --config FILE --out DATA.csv
  nilmw validate --in DATA.csv [--max-power W] [--interpolate] [--report OUT.json]
  nilmw split    --in DATA.csv --spec FILE --out-dir DIR
  nilmw train    --train A.csv --val B.csv --config FILE --out MODEL.bin [--align SECONDS]
  nilmw eval     --model MODEL.bin --test T.csv --report-dir DIR [--sub-horizon M] [--align SECONDS]
  nilmw baseline --test T.csv --lib FILE --report-dir DIR [--sub-horizon M] [--on-threshold W]
  nilmw serve    --model MODEL.bin --source PATH|URL --store OUT.jsonl --port N
                 [--pace realtime|max|fixed:SECS] [--poll-interval S] [--grid-interval S]
                 [--max-power W] [--fsync per-record|interval:S] [--linger]
  nilmw compare  --before R1.json --after R2.json [--out-dir DIR]

Environment: NILMW_PORT and NILMW_STORE override the serve port and store path.
";

struct Flags {
    values: BTreeMap<String, String>,
    switches: Vec<String>,
}

impl Flags {
    fn parse(args: &[String], switch_names: &[&str]) -> Result<Flags> {
        let mut values = BTreeMap::new();
        let mut switches = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let name = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --flag, got `{arg}`")))?;
            if switch_names.contains(&name) {
                switches.push(name.to_string());
                i += 1;
            } else {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Config(format!("--{name} needs a value")))?;
                values.insert(name.to_string(), value.clone());
                i += 2;
            }
        }
        Ok(Flags { values, switches })
    }

    fn take(&mut self, name: &str) -> Option<String> {
        self.values.remove(name)
    }

    fn require(&mut self, name: &str) -> Result<String> {
        self.take(name)
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn switch(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s == name)
    }

    fn finish(self) -> Result<()> {
        if let Some(name) = self.values.keys().next() {
            return Err(Error::Config(format!("unknown flag --{name}")));
        }
        Ok(())
    }
}

fn parse_f64(value: &str, what: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{what}: `{value}` is not a number")))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let (ds, report) = dataio::read_csv(path)?;
    if report.rejected_rows > 0 || !report.ignored_columns.is_empty() {
        eprintln!(
            "note: {}: {} unparseable rows rejected, {} unknown columns ignored",
            path.display(),
            report.rejected_rows,
            report.ignored_columns.len()
        );
    }
    Ok(ds)
}

fn maybe_align(ds: Dataset, align: Option<f64>) -> Result<Dataset> {
    match align {
        Some(interval) => dataio::align_to_grid(&ds, interval),
        None => Ok(ds),
    }
}

/// Dispatches a subcommand; returns the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let Some(subcommand) = args.first().map(String::as_str) else {
        eprintln!("{USAGE}");
        return 2;
    };
    let rest = &args[1..];
    let started = Instant::now();
    let mut manifest = RunManifest::new(subcommand);

    let outcome: Result<Option<PathBuf>> = match subcommand {
        "simulate" => cmd_simulate(rest, &mut manifest),
        "validate" => cmd_validate(rest, &mut manifest),
        "split" => cmd_split(rest, &mut manifest),
        "train" => cmd_train(rest, &mut manifest),
        "eval" => cmd_eval(rest, &mut manifest),
        "baseline" => cmd_baseline(rest, &mut manifest),
        "serve" => cmd_serve(rest, &mut manifest),
        "compare" => cmd_compare(rest, &mut manifest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown subcommand `{other}`\n\n{USAGE}");
            return 2;
        }
    };
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();

    match outcome {
        Ok(anchor) => {
            if let Some(anchor) = anchor {
                if let Err(e) = write_manifest(&manifest, &anchor) {
                    eprintln!("warning: could not write manifest: {e}");
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            manifest.error = Some(e.to_string());
            if let Some(anchor) = manifest.outputs.first().map(PathBuf::from) {
                let _ = write_manifest(&manifest, &anchor);
            }
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn cmd_simulate(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let config_path = PathBuf::from(flags.require("config")?);
    let out = PathBuf::from(flags.require("out")?);
    flags.finish()?;
    manifest.inputs.push(config_path.display().to_string());
    manifest.outputs.push(out.display().to_string());

    let file = ConfigFile::load(&config_path)?;
    let sim_cfg = config::sim_config(&file)?;
    let sched = config::schedule_params(&file)?;
    manifest.config_digest = Some(sim_cfg.digest());
    manifest.seed = Some(sim_cfg.seed);

    let schedule = sim::generate_schedule(
        sched.seed,
        sim_cfg.channels.len(),
        sim_cfg.horizon,
        sched.mean_dwell,
    )?;
    let dataset = sim::simulate(&sim_cfg, &schedule)?;
    let rows = dataio::write_csv(&dataset, &out)?;
    println!(
        "simulated {rows} samples over {:.0} s across {} channels -> {}",
        sim_cfg.horizon,
        sim_cfg.channels.len(),
        out.display()
    );
    Ok(Some(out))
}

fn cmd_validate(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &["interpolate"])?;
    let input = PathBuf::from(flags.require("in")?);
    let max_power = match flags.take("max-power") {
        Some(v) => parse_f64(&v, "--max-power")?,
        None => 1000.0,
    };
    let interpolate = flags.switch("interpolate");
    let report_path = flags
        .take("report")
        .map(PathBuf::from)
        .unwrap_or_else(|| input.with_extension("validation.json"));
    flags.finish()?;
    manifest.inputs.push(input.display().to_string());
    manifest.outputs.push(report_path.display().to_string());

    let (ds, read_report) = dataio::read_csv(&input)?;
    let (_, clean_report) = dataio::clean(&ds, max_power, interpolate)?;

    println!("validation of {}", input.display());
    println!("  rows read            {}", read_report.rows_read);
    println!("  rejected rows        {}", read_report.rejected_rows);
    println!(
        "  ignored columns      {}",
        read_report.ignored_columns.len()
    );
    println!("  negative magnitudes  {}", clean_report.negative_magnitude);
    println!(
        "  over max power       {} (max {max_power} W)",
        clean_report.over_max_power
    );
    println!("  pre-flagged spurious {}", clean_report.pre_flagged);
    println!("  total flagged        {}", clean_report.flagged_total);

    let payload = serde_json::json!({
        "input": input.display().to_string(),
        "read": read_report,
        "clean": clean_report,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&payload)?)
        .map_err(|e| Error::io(&report_path, e))?;
    Ok(Some(report_path))
}

fn cmd_split(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let input = PathBuf::from(flags.require("in")?);
    let spec_path = PathBuf::from(flags.require("spec")?);
    let out_dir = PathBuf::from(flags.require("out-dir")?);
    flags.finish()?;
    manifest.inputs.push(input.display().to_string());
    manifest.inputs.push(spec_path.display().to_string());

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ds = read_dataset(&input)?;
    let spec_file = ConfigFile::load(&spec_path)?;
    let spec: SplitSpec = match config::split_source(&spec_file)? {
        SplitSource::Explicit(spec) => spec,
        SplitSource::Fractions(fractions) => SplitSpec::by_fractions(&ds, fractions)?,
    };
    let outcome = dataio::split_by_time(&ds, &spec)?;

    let mut written = Vec::new();
    for (name, part) in [
        ("train.csv", &outcome.train),
        ("val.csv", &outcome.val),
        ("test.csv", &outcome.test),
    ] {
        let path = out_dir.join(name);
        dataio::write_csv(part, &path)?;
        manifest.outputs.push(path.display().to_string());
        written.push(path);
    }

    let c = &outcome.counts;
    println!("{:<12}{:>10}  {:>7}", "Set", "Samples", "Share");
    println!("{:<12}{:>10}  {:>6.1}%", "Training", c.train, c.train_pct);
    println!("{:<12}{:>10}  {:>6.1}%", "Validation", c.val, c.val_pct);
    println!("{:<12}{:>10}  {:>6.1}%", "Testing", c.test, c.test_pct);
    if c.dropped > 0 {
        println!("{:<12}{:>10}", "Dropped", c.dropped);
    }
    let counts_path = out_dir.join("split_counts.json");
    std::fs::write(&counts_path, serde_json::to_string_pretty(&c)?)
        .map_err(|e| Error::io(&counts_path, e))?;
    manifest.outputs.push(counts_path.display().to_string());
    Ok(Some(written.remove(0)))
}

fn cmd_train(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let train_path = PathBuf::from(flags.require("train")?);
    let val_path = PathBuf::from(flags.require("val")?);
    let config_path = PathBuf::from(flags.require("config")?);
    let out = PathBuf::from(flags.require("out")?);
    let align = flags
        .take("align")
        .map(|v| parse_f64(&v, "--align"))
        .transpose()?;
    flags.finish()?;
    manifest.inputs.extend([
        train_path.display().to_string(),
        val_path.display().to_string(),
        config_path.display().to_string(),
    ]);
    manifest.outputs.push(out.display().to_string());

    let cfg = config::train_config(&ConfigFile::load(&config_path)?)?;
    manifest.seed = Some(cfg.seed);
    let train_ds = maybe_align(read_dataset(&train_path)?, align)?;
    let val_ds = maybe_align(read_dataset(&val_path)?, align)?;

    let (params, history) = net::train(&train_ds, &val_ds, &cfg)?;
    manifest.config_digest = Some(params.config_digest());
    net::save_model(&params, &out)?;

    let history_path = out.with_extension("history.csv");
    std::fs::write(&history_path, history.to_csv(&train_ds.meta.channel_names))
        .map_err(|e| Error::io(&history_path, e))?;
    manifest.outputs.push(history_path.display().to_string());

    for e in &history.epochs {
        let mean_mae = e.val_mae.iter().sum::<f64>() / e.val_mae.len() as f64;
        println!(
            "epoch {:>3}: train loss {:.6}, val MAE {:.3} W",
            e.epoch, e.train_loss, mean_mae
        );
    }
    println!(
        "saved model ({} parameters, digest {}) -> {}",
        params.n_parameters(),
        params.payload_digest(),
        out.display()
    );
    Ok(Some(out))
}

fn write_report_files(
    dir: &Path,
    stem: &str,
    report: &MetricReport,
    manifest: &mut RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (ext, contents) in [
        ("txt", report.render_text()),
        ("csv", report.render_csv()),
        ("json", serde_json::to_string_pretty(report)?),
    ] {
        let path = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(path.display().to_string());
    }
    Ok(())
}

fn write_breakdowns(
    dir: &Path,
    names: &[String],
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
    spec: &SubHorizonSpec,
    on_threshold: f64,
    manifest: &mut RunManifest,
) -> Result<()> {
    // Concurrency buckets: per-k reports plus a bar chart per metric.
    let buckets = breakdown_by_active_count(names, actual, predicted, spec, on_threshold)?;
    let mut csv = String::from("k,samples,low_confidence,avg_mae,avg_sae_watts,avg_f1,avg_nde\n");
    for b in &buckets {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            b.k,
            b.samples,
            b.low_confidence,
            b.report.avg_mae,
            b.report.avg_sae_watts,
            b.report.avg_f1,
            b.report
                .avg_nde
                .map_or("n/a".to_string(), |v| v.to_string()),
        ));
    }
    let path = dir.join("breakdown_by_count.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    manifest.outputs.push(path.display().to_string());

    let categories: Vec<String> = buckets.iter().map(|b| format!("k={}", b.k)).collect();
    for (metric, values) in [
        ("mae", buckets.iter().map(|b| b.report.avg_mae).collect::<Vec<_>>()),
        ("f1", buckets.iter().map(|b| b.report.avg_f1).collect()),
        (
            "nde",
            buckets
                .iter()
                .map(|b| b.report.avg_nde.unwrap_or(0.0))
                .collect(),
        ),
    ] {
        let svg = grouped_bar_chart(
            &format!("{} vs number of machines on", metric.to_uppercase()),
            &categories,
            &[(metric.to_string(), values)],
        );
        let path = dir.join(format!("count_{metric}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(path.display().to_string());
    }

    // ON/OFF state buckets.
    let states = breakdown_by_state(names, actual, predicted, spec, on_threshold)?;
    let mut csv = String::from("appliance,state,samples,mae,sae_watts,nde,accuracy\n");
    for row in &states {
        for (label, stats) in [("on", &row.on), ("off", &row.off)] {
            if let Some(s) = stats {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.name,
                    label,
                    s.samples,
                    s.mae,
                    s.sae_watts,
                    s.nde.map_or("n/a".to_string(), |v| v.to_string()),
                    s.accuracy,
                ));
            }
        }
    }
    let path = dir.join("breakdown_by_state.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    manifest.outputs.push(path.display().to_string());

    let svg = grouped_bar_chart(
        "MAE by machine state",
        &states.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
        &[
            (
                "on".to_string(),
                states
                    .iter()
                    .map(|s| s.on.as_ref().map_or(0.0, |b| b.mae))
                    .collect(),
            ),
            (
                "off".to_string(),
                states
                    .iter()
                    .map(|s| s.off.as_ref().map_or(0.0, |b| b.mae))
                    .collect(),
            ),
        ],
    );
    let path = dir.join("state_mae.svg");
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    manifest.outputs.push(path.display().to_string());
    Ok(())
}

fn cmd_eval(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let model_path = PathBuf::from(flags.require("model")?);
    let test_path = PathBuf::from(flags.require("test")?);
    let report_dir = PathBuf::from(flags.require("report-dir")?);
    let sub_horizon = match flags.take("sub-horizon") {
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("--sub-horizon: `{v}` is not an integer")))?,
        None => 720,
    };
    let align = flags
        .take("align")
        .map(|v| parse_f64(&v, "--align"))
        .transpose()?;
    flags.finish()?;
    manifest.inputs.extend([
        model_path.display().to_string(),
        test_path.display().to_string(),
    ]);

    let params = net::load_model(&model_path)?;
    manifest.config_digest = Some(params.config_digest());
    let test_ds = maybe_align(read_dataset(&test_path)?, align)?;
    if test_ds.n_channels() != params.config.n_appliances {
        return Err(Error::Shape(format!(
            "test set has {} channels but the model expects {}",
            test_ds.n_channels(),
            params.config.n_appliances
        )));
    }

    let predicted = net::predict_series(&params, &test_ds)?;
    let actual: Vec<Vec<f64>> = (0..test_ds.n_channels())
        .map(|a| test_ds.channel_power(a))
        .collect();
    let spec = SubHorizonSpec::new(sub_horizon.min(test_ds.len()))?;
    let report = MetricReport::compute(
        &test_ds.meta.channel_names,
        &actual,
        &predicted,
        &spec,
        params.config.on_threshold,
    )?;
    print!("{}", report.render_text());
    write_report_files(&report_dir, "report", &report, manifest)?;
    write_breakdowns(
        &report_dir,
        &test_ds.meta.channel_names,
        &actual,
        &predicted,
        &spec,
        params.config.on_threshold,
        manifest,
    )?;
    Ok(Some(report_dir.join("report.json")))
}

fn cmd_baseline(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let test_path = PathBuf::from(flags.require("test")?);
    let lib_path = PathBuf::from(flags.require("lib")?);
    let report_dir = PathBuf::from(flags.require("report-dir")?);
    let sub_horizon = match flags.take("sub-horizon") {
        Some(v) => v
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("--sub-horizon: `{v}` is not an integer")))?,
        None => 720,
    };
    let on_threshold = match flags.take("on-threshold") {
        Some(v) => parse_f64(&v, "--on-threshold")?,
        None => 5.0,
    };
    flags.finish()?;
    manifest.inputs.extend([
        test_path.display().to_string(),
        lib_path.display().to_string(),
    ]);

    let test_ds = read_dataset(&test_path)?;
    let lib = config::signature_library(&ConfigFile::load(&lib_path)?)?;
    if lib.n_channels() != test_ds.n_channels() {
        return Err(Error::Shape(format!(
            "library has {} channels but test set has {}",
            lib.n_channels(),
            test_ds.n_channels()
        )));
    }
    let main_power: Vec<f64> = test_ds.samples.iter().map(|s| s.main_p).collect();
    let states = baseline::match_states(&main_power, &lib)?;
    let predicted = baseline::reconstruct(&states, &lib);
    let actual: Vec<Vec<f64>> = (0..test_ds.n_channels())
        .map(|a| test_ds.channel_power(a))
        .collect();
    let spec = SubHorizonSpec::new(sub_horizon.min(test_ds.len()))?;
    let report = MetricReport::compute(
        &test_ds.meta.channel_names,
        &actual,
        &predicted,
        &spec,
        on_threshold,
    )?;
    print!("{}", report.render_text());
    write_report_files(&report_dir, "baseline_report", &report, manifest)?;
    Ok(Some(report_dir.join("baseline_report.json")))
}

fn cmd_serve(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &["linger"])?;
    let model_path = PathBuf::from(flags.require("model")?);
    let source_arg = flags.require("source")?;
    // Environment overrides win over flags; both are consumed either way.
    let store_flag = flags.take("store");
    let store_arg = match std::env::var("NILMW_STORE") {
        Ok(v) => v,
        Err(_) => store_flag
            .ok_or_else(|| Error::Config("missing required flag --store".to_string()))?,
    };
    let port_flag = flags.take("port");
    let port_text = match std::env::var("NILMW_PORT") {
        Ok(v) => v,
        Err(_) => port_flag
            .ok_or_else(|| Error::Config("missing required flag --port".to_string()))?,
    };
    let port: u16 = port_text
        .parse()
        .map_err(|_| Error::Config(format!("port `{port_text}` is not a number")))?;
    let pace = match flags.take("pace").as_deref() {
        None | Some("realtime") => Pace::Realtime,
        Some("max" | "max_speed") => Pace::MaxSpeed,
        Some(other) => match other.strip_prefix("fixed:") {
            Some(secs) => Pace::Fixed(parse_f64(secs, "--pace fixed")?),
            None => {
                return Err(Error::Config(format!(
                    "--pace `{other}`: expected realtime, max, or fixed:SECS"
                )))
            }
        },
    };
    let poll_interval = match flags.take("poll-interval") {
        Some(v) => parse_f64(&v, "--poll-interval")?,
        None => 5.0,
    };
    let grid_interval = match flags.take("grid-interval") {
        Some(v) => parse_f64(&v, "--grid-interval")?,
        None => 5.0,
    };
    let max_power = match flags.take("max-power") {
        Some(v) => parse_f64(&v, "--max-power")?,
        None => 10_000.0,
    };
    let fsync = match flags.take("fsync").as_deref() {
        None | Some("per-record") => FsyncPolicy::PerRecord,
        Some(other) => match other.strip_prefix("interval:") {
            Some(secs) => FsyncPolicy::Interval(parse_f64(secs, "--fsync interval")?),
            None => {
                return Err(Error::Config(format!(
                    "--fsync `{other}`: expected per-record or interval:SECS"
                )))
            }
        },
    };
    let linger = flags.switch("linger");
    flags.finish()?;

    let store_path = PathBuf::from(&store_arg);
    manifest.inputs.extend([
        model_path.display().to_string(),
        source_arg.clone(),
    ]);
    manifest.outputs.push(store_path.display().to_string());

    let params = net::load_model(&model_path)?;
    manifest.config_digest = Some(params.config_digest());
    let source = if source_arg.starts_with("http://") {
        SourceConfig::HttpPoll {
            url: source_arg,
            poll_interval,
        }
    } else {
        SourceConfig::Replay {
            path: PathBuf::from(&source_arg),
            pace,
        }
    };
    let mut store_cfg = StoreConfig::for_path(&store_path);
    store_cfg.fsync = fsync;
    let opts = rt::RunOptions {
        grid_interval,
        max_power,
        appliance_names: None,
        linger,
    };
    let stop = StopHandle::new();
    println!("serving on 127.0.0.1:{port}, store {}", store_path.display());
    let summary = rt::run(&source, &params, &store_cfg, port, &opts, &stop)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Some(store_path))
}

fn cmd_compare(args: &[String], manifest: &mut RunManifest) -> Result<Option<PathBuf>> {
    let mut flags = Flags::parse(args, &[])?;
    let before_path = PathBuf::from(flags.require("before")?);
    let after_path = PathBuf::from(flags.require("after")?);
    let out_dir = PathBuf::from(flags.take("out-dir").unwrap_or_else(|| ".".to_string()));
    flags.finish()?;
    manifest.inputs.extend([
        before_path.display().to_string(),
        after_path.display().to_string(),
    ]);

    let load = |path: &Path| -> Result<MetricReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    };
    let before = load(&before_path)?;
    let after = load(&after_path)?;
    let drift = compare_reports(&before, &after)?;
    print!("{}", drift.render_text());

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let csv_path = out_dir.join("drift.csv");
    std::fs::write(&csv_path, drift.render_csv()).map_err(|e| Error::io(&csv_path, e))?;
    manifest.outputs.push(csv_path.display().to_string());
    for metric in ["mae", "sae", "f1", "nde"] {
        let path = out_dir.join(format!("drift_{metric}.svg"));
        std::fs::write(&path, drift.render_svg(metric)).map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(path.display().to_string());
    }
    Ok(Some(csv_path))
}
