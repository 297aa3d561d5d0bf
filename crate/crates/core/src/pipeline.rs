//! Bent-pipe and edge-filter runs over a shared test set and downlink.
//!
//! Bent pipe downlinks every captured image. Edge filter first classifies
//! every image on board and downlinks only those predicted artificial. Edge
//! time is modelled as `images × MACs / mac_rate`; the two phases are
//! sequential, so `total = edge + transmission`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::archs::Arch;
use crate::dataset::{Label, LabeledImage};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::linksim::{transmit, LinkParams};
use crate::model::Model;
use crate::train::{predict, Metrics};

/// Images in the reference test split.
pub const REFERENCE_TEST_IMAGES: usize = 420;
/// Edge processing time the default MAC rate assigns to MSNet over the
/// reference test split, seconds.
pub const REFERENCE_MSNET_EDGE_S: f64 = 0.64;

/// MACs per second at which MSNet needs exactly
/// [`REFERENCE_MSNET_EDGE_S`] for [`REFERENCE_TEST_IMAGES`] images.
pub fn default_mac_rate() -> Result<f64> {
    let macs = Arch::MsNet.build(0)?.mac_report()?.total;
    Ok(REFERENCE_TEST_IMAGES as f64 * macs as f64 / REFERENCE_MSNET_EDGE_S)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    BentPipe,
    EdgeFilter,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::BentPipe => "bent_pipe",
            RunMode::EdgeFilter => "edge_filter",
        }
    }
}

/// An on-board classifier deciding which images to downlink.
pub trait EdgeClassifier {
    /// Architecture identifier shown in reports.
    fn name(&self) -> &str;

    fn macs_per_image(&self) -> Result<u64>;

    /// One label per image, in input order.
    fn classify(&self, images: &[LabeledImage]) -> Result<Vec<Label>>;
}

impl EdgeClassifier for Model {
    fn name(&self) -> &str {
        self.arch()
    }

    fn macs_per_image(&self) -> Result<u64> {
        Ok(self.mac_report()?.total)
    }

    fn classify(&self, images: &[LabeledImage]) -> Result<Vec<Label>> {
        if self.mode() != Mode::Eval {
            return Err(Error::InvalidArgument(format!(
                "{} is not in eval mode; train or load it before filtering",
                self.arch()
            )));
        }
        predict(self, images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: RunMode,
    /// Edge architecture; `None` for bent pipe.
    pub model: Option<String>,
    pub n_input: usize,
    pub n_transmitted: usize,
    /// Modelled on-board time, seconds.
    pub edge_time_s: f64,
    /// Measured wall clock of the on-board classification on this machine.
    /// Informational only; never rendered into report files.
    #[serde(skip)]
    pub edge_wall_s: f64,
    pub transmission_time_s: f64,
    pub total_s: f64,
    /// `None` when not applicable (bent pipe, or counts-only runs).
    pub metrics: Option<Metrics>,
    pub link: LinkParams,
}

impl RunReport {
    fn assemble(
        mode: RunMode,
        model: Option<String>,
        n_input: usize,
        n_transmitted: usize,
        edge_time_s: f64,
        metrics: Option<Metrics>,
        link: &LinkParams,
    ) -> Self {
        let transmission_time_s = transmit(n_transmitted, link).total_s();
        Self {
            mode,
            model,
            n_input,
            n_transmitted,
            edge_time_s,
            edge_wall_s: 0.0,
            transmission_time_s,
            total_s: edge_time_s + transmission_time_s,
            metrics,
            link: *link,
        }
    }

    /// Column heading: "Bent Pipe" or the architecture's display name.
    pub fn column_name(&self) -> String {
        match (&self.mode, &self.model) {
            (RunMode::BentPipe, _) => "Bent Pipe".to_owned(),
            (RunMode::EdgeFilter, Some(m)) => {
                m.parse::<Arch>().map(|a| a.display_name().to_owned()).unwrap_or_else(|_| m.clone())
            }
            (RunMode::EdgeFilter, None) => "Edge Filter".to_owned(),
        }
    }
}

/// Downlink every image without on-board processing.
pub fn run_bent_pipe(test_set: &[LabeledImage], link: &LinkParams) -> Result<RunReport> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("bent pipe run needs at least one image".into()));
    }
    bent_pipe_from_count(test_set.len(), link)
}

pub fn bent_pipe_from_count(n_input: usize, link: &LinkParams) -> Result<RunReport> {
    link.validate()?;
    Ok(RunReport::assemble(RunMode::BentPipe, None, n_input, n_input, 0.0, None, link))
}

/// Classify every image on board and downlink the predicted-artificial ones.
pub fn run_edge_filter(
    test_set: &[LabeledImage],
    classifier: &dyn EdgeClassifier,
    link: &LinkParams,
    mac_rate: f64,
) -> Result<RunReport> {
    if !(mac_rate > 0.0 && mac_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!("mac_rate must be positive, got {mac_rate}")));
    }
    link.validate()?;
    let macs = classifier.macs_per_image()?;
    let started = Instant::now();
    let predictions = classifier.classify(test_set)?;
    let wall = started.elapsed().as_secs_f64();
    if predictions.len() != test_set.len() {
        return Err(Error::InvalidArgument(format!(
            "classifier returned {} labels for {} images",
            predictions.len(),
            test_set.len()
        )));
    }
    let truth: Vec<Label> = test_set.iter().map(|i| i.label).collect();
    let metrics = Metrics::from_predictions(&truth, &predictions);
    let edge_time_s = test_set.len() as f64 * macs as f64 / mac_rate;
    let mut report = RunReport::assemble(
        RunMode::EdgeFilter,
        Some(classifier.name().to_owned()),
        test_set.len(),
        metrics.predicted_positive() as usize,
        edge_time_s,
        Some(metrics),
        link,
    );
    report.edge_wall_s = wall;
    Ok(report)
}

/// Edge-filter row from externally supplied counts and edge time, without
/// running a classifier. Metrics are left empty.
pub fn edge_filter_from_counts(
    model: &str,
    n_input: usize,
    n_transmitted: usize,
    edge_time_s: f64,
    link: &LinkParams,
) -> Result<RunReport> {
    if n_transmitted > n_input {
        return Err(Error::InvalidArgument(format!("cannot transmit {n_transmitted} of {n_input} images")));
    }
    if edge_time_s.is_nan() || edge_time_s < 0.0 {
        return Err(Error::InvalidArgument("edge time must be non-negative".into()));
    }
    link.validate()?;
    Ok(RunReport::assemble(
        RunMode::EdgeFilter,
        Some(model.to_owned()),
        n_input,
        n_transmitted,
        edge_time_s,
        None,
        link,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<RunReport>,
    /// Percent of total time saved relative to the first bent-pipe row;
    /// `None` for every row when there is no bent-pipe row or only one row.
    pub time_saved_pct: Vec<Option<f64>>,
}

pub fn compare(reports: Vec<RunReport>) -> Result<ComparisonTable> {
    let first = reports.first().ok_or_else(|| Error::InvalidArgument("nothing to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.n_input != first.n_input || r.link != first.link) {
        return Err(Error::InvalidArgument(format!(
            "rows disagree on test set or link: {} images vs {}",
            r.n_input, first.n_input
        )));
    }
    let baseline =
        (reports.len() > 1).then(|| reports.iter().find(|r| r.mode == RunMode::BentPipe)).flatten().map(|r| r.total_s);
    let time_saved_pct =
        reports.iter().map(|r| baseline.map(|b| if b > 0.0 { (b - r.total_s) / b * 100.0 } else { 0.0 })).collect();
    Ok(ComparisonTable { rows: reports, time_saved_pct })
}
