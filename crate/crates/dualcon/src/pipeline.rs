//! From a [`RunConfig`] to datasets, a split and a trained model.

use std::path::Path;
use std::time::Instant;

use dualcon_core::data::{split_semi, synth_blobs, ChannelStats, Dataset, SemiSplit};
use dualcon_core::trainer::{fit_with, FitObserver, FitResult, MetricsRow};
use dualcon_core::Rng;

use crate::cifar;
use crate::config::{DataKind, RunConfig};
use crate::error::{Error, Result};
use crate::formats::MetricsWriter;

pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub split: SemiSplit,
    /// Statistics used for standardization, if it was applied.
    pub standardized_with: Option<ChannelStats>,
}

/// Builds or loads the data described by `cfg.data`.
///
/// Blobs draw the training set, test set and split from streams 1, 2 and 3 of
/// the data seed; CIFAR-10 uses stream 3 for the split.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let d = &cfg.data;
    let root = Rng::new(cfg.data_seed());
    let (mut train, mut test) = match d.kind {
        DataKind::Blobs => (
            synth_blobs(&mut root.derive(1), &d.blob_spec(d.per_class))?,
            synth_blobs(&mut root.derive(2), &d.blob_spec(d.test_per_class))?,
        ),
        DataKind::Cifar10 => {
            let dir = d
                .dir
                .as_deref()
                .ok_or_else(|| Error::Config("data.kind = cifar10 needs data.dir".into()))?;
            cifar::load_cifar10_prefix(dir, d.train_subset, d.test_subset)?
        }
    };
    let standardized_with = if d.standardize() {
        let stats = train.stats.clone();
        train.standardize(&stats)?;
        test.standardize(&stats)?;
        Some(stats)
    } else {
        None
    };
    let split = split_semi(&train, d.labels_per_class, &mut root.derive(3))?;
    Ok(Prepared {
        train,
        test,
        split,
        standardized_with,
    })
}

/// `#`-prefixed effective config, plus the standardization statistics.
pub fn banner(cfg: &RunConfig, prepared: &Prepared) -> String {
    let mut out = cfg.render("# ");
    if let Some(s) = &prepared.standardized_with {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!("# stats.mean = {}\n", list(&s.mean)));
        out.push_str(&format!("# stats.std = {}\n", list(&s.std)));
    }
    out
}

struct CsvObserver<'a> {
    writer: &'a mut MetricsWriter,
    clock: Option<Instant>,
    error: Option<Error>,
}

impl FitObserver for CsvObserver<'_> {
    fn elapsed_ms(&mut self) -> f64 {
        self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3)
    }

    fn on_row(&mut self, row: &MetricsRow) {
        if self.error.is_none() {
            if let Err(e) = self.writer.row(row) {
                self.error = Some(e);
            }
        }
    }
}

/// Trains and streams the metrics CSV to `metrics_path`.
pub fn train_to_csv(
    cfg: &RunConfig,
    prepared: &Prepared,
    metrics_path: &Path,
) -> Result<FitResult> {
    let mut writer = MetricsWriter::create(metrics_path, &banner(cfg, prepared))?;
    let mut obs = CsvObserver {
        writer: &mut writer,
        clock: cfg.record_wall_ms.then(Instant::now),
        error: None,
    };
    let result = fit_with(
        &cfg.train,
        &prepared.train,
        &prepared.split,
        Some(&prepared.test),
        &mut obs,
    );
    if let Some(e) = obs.error {
        return Err(e);
    }
    Ok(result?)
}
