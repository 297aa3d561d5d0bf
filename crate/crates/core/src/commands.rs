//! Command-line entry points behind the `orbitfilter` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::archs::Arch;
use crate::config::{load_config, parse_config, DatasetSource, ExperimentConfig};
use crate::dataset::{default_binarization, generate_synthetic, load_directory, LabeledImage};
use crate::error::{Error, Result};
use crate::linksim::{calibrate, residual};
use crate::model::Model;
use crate::pipeline::{
    bent_pipe_from_count, compare, edge_filter_from_counts, run_bent_pipe, run_edge_filter, ComparisonTable, RunMode,
};
use crate::report::{render_csv, render_markdown};
use crate::rng::Rng;
use crate::train::{split_dataset, train_model};

pub const SEED_ENV: &str = "ORBITFILTER_SEED";

#[derive(Debug, Parser)]
#[command(name = "orbitfilter", version, about = "Edge filtering vs bent-pipe downlink simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Root seed. Overrides ORBITFILTER_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split, train each edge model, run every mode and write the report.
    Run(Common),
    /// Train and save the edge models only.
    Train(Common),
    /// Link-only comparison from given transmit counts.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Images captured per pass.
        #[arg(long, default_value_t = 420)]
        n_input: usize,
        /// Edge-filter row as MODEL:TRANSMITTED[:EDGE_SECONDS]. Repeatable.
        #[arg(long = "row", value_name = "SPEC")]
        rows: Vec<String>,
    },
    /// Print per-layer multiply-accumulate counts.
    Macs {
        /// Architecture name; all four when omitted.
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit link parameters to observed (images, seconds) pairs.
    Calibrate {
        /// Observation as IMAGES:SECONDS. At least two.
        #[arg(long = "point", value_name = "N:SECONDS", required = true)]
        points: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse arguments, run, and map errors to a nonzero exit status.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(common) => {
            let config = resolve_config(&common)?;
            let table = cmd_run(&config, &common.out)?;
            print!("{}", render_markdown(&table));
            Ok(())
        }
        Command::Train(common) => {
            let config = resolve_config(&common)?;
            prepare_out(&common.out, &config)?;
            let (train, _) = prepare_data(&config)?;
            for arch in &config.edge.archs {
                train_and_save(*arch, &train, &config, &common.out)?;
            }
            Ok(())
        }
        Command::Simulate { common, n_input, rows } => {
            let config = resolve_config(&common)?;
            let table = cmd_simulate(&config, n_input, &rows, &common.out)?;
            print!("{}", render_markdown(&table));
            Ok(())
        }
        Command::Macs { arch, out } => cmd_macs(arch, out.as_deref()),
        Command::Calibrate { points, out } => cmd_calibrate(&points, out.as_deref()),
    }
}

/// Config file, then `ORBITFILTER_SEED`, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => parse_config("")?,
    };
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let seed =
            raw.trim().parse().map_err(|_| Error::config(SEED_ENV, format!("not an unsigned integer: {raw:?}")))?;
        config = config.with_seed(seed)?;
    }
    if let Some(seed) = common.seed {
        config = config.with_seed(seed)?;
    }
    Ok(config)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_out(out: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("resolved-config.txt"), config.dump())
}

/// Generate or load images, then split into train and test.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let images = match &config.dataset.source {
        DatasetSource::Synthetic => generate_synthetic(config.dataset.n_synthetic, &Rng::new(config.seed, "dataset"))?,
        DatasetSource::Directory(path) => {
            let map = default_binarization().with_overrides(&config.binarization);
            load_directory(path, &map)?
        }
    };
    let total = images.len();
    let (train, test) = split_dataset(images, config.dataset.train_fraction, &mut Rng::new(config.seed, "split"))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{total} images is too few to split at {}",
            config.dataset.train_fraction
        )));
    }
    info!("{} train / {} test images", train.len(), test.len());
    Ok((train, test))
}

fn train_and_save(arch: Arch, train: &[LabeledImage], config: &ExperimentConfig, out: &Path) -> Result<Model> {
    let mut model = arch.build(config.seed)?;
    let history = train_model(&mut model, train, &config.training, config.seed)?;
    if let Some(last) = history.last() {
        info!("{arch}: final loss {:.4}, train accuracy {:.4}", last.loss, last.train_accuracy);
    }
    model.save(out.join(format!("model-{}.ofw", arch.name())))?;
    Ok(model)
}

fn write_reports(table: &ComparisonTable, out: &Path) -> Result<()> {
    write(&out.join("report.csv"), render_csv(table))?;
    write(&out.join("report.md"), render_markdown(table))
}

/// Full experiment. Writes `report.csv`, `report.md`, `resolved-config.txt`
/// and one `model-<arch>.ofw` per trained edge model.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<ComparisonTable> {
    prepare_out(out, config)?;
    let (train, test) = prepare_data(config)?;
    let mut reports = Vec::new();
    if config.wants(RunMode::BentPipe) {
        reports.push(run_bent_pipe(&test, &config.link)?);
    }
    if config.wants(RunMode::EdgeFilter) {
        for &arch in &config.edge.archs {
            let model = train_and_save(arch, &train, config, out)?;
            let report = run_edge_filter(&test, &model, &config.link, config.edge.mac_rate)?;
            info!(
                "{arch}: {} of {} transmitted, classification wall clock {:.2}s",
                report.n_transmitted, report.n_input, report.edge_wall_s
            );
            reports.push(report);
        }
    }
    let table = compare(reports)?;
    write_reports(&table, out)?;
    Ok(table)
}

fn parse_row(spec: &str) -> Result<(String, usize, f64)> {
    let bad = || Error::InvalidArgument(format!("row {spec:?} is not MODEL:TRANSMITTED[:EDGE_SECONDS]"));
    let mut parts = spec.split(':');
    let model = parts.next().filter(|m| !m.is_empty()).ok_or_else(bad)?;
    let count = parts.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
    let edge = match parts.next() {
        None => 0.0,
        Some(t) => t.parse().map_err(|_| bad())?,
    };
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((model.to_owned(), count, edge))
}

/// Link-only comparison: bent pipe plus one edge-filter row per spec.
pub fn cmd_simulate(config: &ExperimentConfig, n_input: usize, rows: &[String], out: &Path) -> Result<ComparisonTable> {
    prepare_out(out, config)?;
    let mut reports = Vec::new();
    if config.wants(RunMode::BentPipe) {
        reports.push(bent_pipe_from_count(n_input, &config.link)?);
    }
    if config.wants(RunMode::EdgeFilter) {
        for spec in rows {
            let (model, count, edge) = parse_row(spec)?;
            reports.push(edge_filter_from_counts(&model, n_input, count, edge, &config.link)?);
        }
    } else if !rows.is_empty() {
        warn!("edge_filter mode is disabled; ignoring {} row(s)", rows.len());
    }
    let table = compare(reports)?;
    write_reports(&table, out)?;
    Ok(table)
}

fn cmd_macs(arch: Option<Arch>, out: Option<&Path>) -> Result<()> {
    let archs = arch.map(|a| vec![a]).unwrap_or_else(|| Arch::ALL.to_vec());
    let mut text = String::new();
    for arch in archs {
        let report = arch.build(0)?.mac_report()?;
        text.push_str(&format!("## {} ({})\n\n", arch.display_name(), arch.name()));
        text.push_str("| # | layer | output | MACs |\n|---:|---|---|---:|\n");
        for l in &report.layers {
            text.push_str(&format!("| {} | {} | {} | {} |\n", l.index, l.kind, l.output, l.macs));
        }
        text.push_str(&format!("\ntotal MACs per image: {}\nparameters: {}\n\n", report.total, report.params));
    }
    print!("{text}");
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join("macs.md"), &text)?;
    }
    Ok(())
}

fn cmd_calibrate(points: &[String], out: Option<&Path>) -> Result<()> {
    let parsed = points
        .iter()
        .map(|p| {
            p.split_once(':')
                .and_then(|(n, t)| Some((n.parse().ok()?, t.parse().ok()?)))
                .ok_or_else(|| Error::InvalidArgument(format!("point {p:?} is not IMAGES:SECONDS")))
        })
        .collect::<Result<Vec<(usize, f64)>>>()?;
    let link = calibrate(&parsed)?;
    let text = format!(
        "[link]\nbase_latency_s = {}\nper_image_s = {}\n# sum of squared residuals: {:e}\n",
        link.base_latency_s,
        link.per_image_s,
        residual(&link, &parsed)
    );
    print!("{text}");
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join("link.toml"), &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_specs() {
        assert_eq!(parse_row("msnet:272:0.64").unwrap(), ("msnet".into(), 272, 0.64));
        assert_eq!(parse_row("x:5").unwrap(), ("x".into(), 5, 0.0));
        for bad in ["", ":3", "m", "m:x", "m:3:y", "m:1:2:3"] {
            assert!(parse_row(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn cli_shape() {
        let cli = Cli::try_parse_from(["orbitfilter", "run", "--out", "o", "--seed", "4"]).unwrap();
        assert!(matches!(cli.command, Command::Run(Common { seed: Some(4), .. })));
        assert!(Cli::try_parse_from(["orbitfilter", "run"]).is_err());
        let cli = Cli::try_parse_from(["orbitfilter", "macs", "--arch", "msnet"]).unwrap();
        assert!(matches!(cli.command, Command::Macs { arch: Some(Arch::MsNet), .. }));
    }
}
