//! `results.csv` persistence and PSNR-vs-|h| plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::SchemeName;
use super::sweep::RunRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "scheme,h,E,P,seed,psnr_db,n_images,wall_s";
pub const RESULTS_FILE: &str = "results.csv";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("results file: {other:?}")),
    }
}

/// Serialized appender; the header is written on creation.
pub struct CsvAppender {
    writer: csv::Writer<fs::File>,
}

impl CsvAppender {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
        writer.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        self.writer.serialize(record).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut out = CsvAppender::create(path)?;
    records.iter().try_for_each(|r| out.append(r))
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidConfig(format!("unexpected results header {:?}", header.join(","))));
    }
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Files written by [`emit_outputs`].
#[derive(Clone, Debug)]
pub struct Outputs {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Writes `results.csv` and one plot per (E, P) group.
pub fn emit_outputs(records: &[RunRecord], dir: &Path) -> Result<Outputs> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no records to emit".into()));
    }
    fs::create_dir_all(dir)?;
    let csv = dir.join(RESULTS_FILE);
    write_csv(records, &csv)?;
    let plots = emit_plots(records, dir)?;
    Ok(Outputs { csv, plots })
}

/// Per-scheme curves of the across-seed mean, one file per (E, P).
pub fn emit_plots(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.e, r.p)).or_default().push(r);
    }
    let mut paths = Vec::new();
    for ((e, p), rs) in groups {
        let path = dir.join(format!("psnr_vs_h_E{e}_P{p}.svg"));
        fs::write(&path, render_plot(&format!("PSNR vs |h| (E = {e}, P = {p})"), &series(&rs)))?;
        paths.push(path);
    }
    Ok(paths)
}

type Series = BTreeMap<SchemeName, Vec<(f64, f64)>>;

fn series(records: &[&RunRecord]) -> Series {
    let mut acc: BTreeMap<SchemeName, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for r in records {
        let cell = acc.entry(r.scheme).or_default().entry(r.h.to_bits()).or_insert((0.0, 0));
        cell.0 += r.psnr_db;
        cell.1 += 1;
    }
    acc.into_iter()
        .map(|(s, pts)| {
            let mut v: Vec<(f64, f64)> = pts.into_iter().map(|(h, (sum, n))| (f64::from_bits(h), sum / n as f64)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (s, v)
        })
        .collect()
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"];

fn render_plot(title: &str, series: &Series) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 60.0, 150.0, 40.0, 50.0);
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    y0 = (y0 - 1.0).floor();
    y1 = (y1 + 1.0).ceil();
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, left + pw / 2.0);
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let x = x0 + (x1 - x0) * i as f64 / 5.0;
        let y = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.2}</text>"#, sx(x), top + ph + 18.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.1}</text>"#, left - 6.0, sy(y) + 4.0);
        let _ = writeln!(s, r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, left + pw, sy(y), sy(y));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">|h|</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">PSNR (dB)</text>"#, top + ph / 2.0);
    for (i, (scheme, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, line.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 16.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, left + pw + 12.0, left + pw + 32.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{scheme}</text>"#, left + pw + 38.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
