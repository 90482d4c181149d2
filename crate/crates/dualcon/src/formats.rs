//! CSV outputs: training metrics, bound sweeps, exported features and
//! materialized synthetic datasets. All text is UTF-8 with LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dualcon_core::data::Dataset;
use dualcon_core::mi_oracle::SweepRow;
use dualcon_core::model::{encode, ModelParams};
use dualcon_core::trainer::MetricsRow;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,lr,loss_total,loss_ce,loss_z,loss_q,train_acc,test_acc,wall_ms";
pub const SWEEP_HEADER: &str = "seed,m_r,m_s,n,mi_nats,infonce,log_n,gap,pass";

/// `x` with `digits` significant digits, in the style of C's `%.{digits}g`.
pub fn sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn f9(x: f64) -> String {
    sig(x, 9)
}

pub fn metrics_line(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.epoch,
        f9(row.lr),
        f9(row.loss_total),
        f9(row.loss_ce),
        f9(row.loss_z),
        f9(row.loss_q),
        f9(row.train_acc),
        f9(row.test_acc),
        f9(row.wall_ms)
    )
}

/// `#`-prefixed banner, the header, then one line per row.
pub fn render_metrics(banner: &str, rows: &[MetricsRow]) -> String {
    let mut out = String::from(banner);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&metrics_line(r));
        out.push('\n');
    }
    out
}

/// Metrics file written row by row as training progresses.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, banner: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write(&format!("{banner}{METRICS_HEADER}\n"))?;
        Ok(w)
    }

    fn write(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(&mut self, row: &MetricsRow) -> Result<()> {
        self.write(&format!("{}\n", metrics_line(row)))
    }
}

pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let b = &r.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            r.m_r,
            r.m_s,
            r.n,
            sig(b.mi, 17),
            sig(b.infonce, 17),
            sig(b.log_n, 17),
            sig(b.gap, 17),
            b.pass
        ));
    }
    out
}

/// `sample_index,label,f0..f{p-1}` with the encoder's features of every sample.
pub fn render_features(params: &ModelParams, ds: &Dataset) -> Result<String> {
    let z = encode(params, &ds.x)?;
    let p = z.cols();
    let mut out = String::from("sample_index,label");
    for k in 0..p {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&format!("{i},{}", ds.y[i]));
        for v in z.row(i) {
            out.push(',');
            out.push_str(&sig(*v, 17));
        }
        out.push('\n');
    }
    Ok(out)
}

/// `label,x0..x{d-1}` for every sample.
pub fn render_dataset(ds: &Dataset) -> String {
    let mut out = String::from("label");
    for k in 0..ds.sample_width() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&ds.y[i].to_string());
        for v in ds.x.row(i) {
            out.push(',');
            out.push_str(&sig(*v, 17));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
