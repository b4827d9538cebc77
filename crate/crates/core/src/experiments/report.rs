//! Aggregation of run results into tables, genre / track-count breakdowns
//! and static SVG box plots.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::protocol::{Protocol, RunResult, BUCKETS};
use crate::contrastive::Regime;
use crate::error::{Error, Result};
use crate::manifest::write_atomic;

/// Default minimum number of test tracks for a genre to be reported.
pub const MIN_GENRE_TEST_TRACKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot summarize an empty set"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            n,
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: Protocol,
    pub regime: Regime,
    pub n_classes: usize,
    pub top1: Summary,
    pub top5: Summary,
}

fn protocol_str(p: Protocol) -> &'static str {
    match p {
        Protocol::Identification => "identification",
        Protocol::Cloned => "cloned",
    }
}

/// Mean and spread of top-1/top-5 per (protocol, regime, n_classes).
pub fn aggregate(runs: &[RunResult]) -> Result<Vec<AggregateRow>> {
    if runs.is_empty() {
        return Err(Error::invalid("no run results to aggregate"));
    }
    let mut groups: BTreeMap<(&str, &str, usize), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((protocol_str(r.protocol), r.regime.as_str(), r.n_classes))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let t1: Vec<f64> = g.iter().map(|r| r.top1).collect();
            let t5: Vec<f64> = g.iter().map(|r| r.top5).collect();
            Ok(AggregateRow {
                protocol: g[0].protocol,
                regime: g[0].regime,
                n_classes: g[0].n_classes,
                top1: Summary::of(&t1)?,
                top5: Summary::of(&t5)?,
            })
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "protocol", "regime", "n_classes", "n_runs", "top1_mean", "top1_std", "top5_mean", "top5_std",
    ])?;
    for r in rows {
        w.write_record([
            protocol_str(r.protocol).to_string(),
            r.regime.as_str().to_string(),
            r.n_classes.to_string(),
            r.top1.n.to_string(),
            format!("{:.6}", r.top1.mean),
            format!("{:.6}", r.top1.std),
            format!("{:.6}", r.top5.mean),
            format!("{:.6}", r.top5.std),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Per-genre top-5 and per-bucket top-1, one value per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub genre_top5: BTreeMap<String, Vec<f64>>,
    /// Genres dropped for having too few test tracks.
    pub omitted_genres: Vec<String>,
    pub bucket_top1: BTreeMap<String, Vec<f64>>,
}

/// Collects genre and bucket scores over runs. A genre is kept when its
/// mean test-track count per run reaches `min_genre_tracks`.
pub fn breakdown(runs: &[RunResult], min_genre_tracks: usize) -> Result<Breakdown> {
    if runs.is_empty() {
        return Err(Error::invalid("no run results to break down"));
    }
    let mut genre: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut bucket_top1: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (g, s) in &r.per_genre {
            let slot = genre.entry(g.clone()).or_default();
            slot.0.push(s.top5);
            slot.1 += s.n;
        }
        for (b, v) in &r.per_bucket {
            bucket_top1.entry(b.clone()).or_default().push(*v);
        }
    }
    let mut genre_top5 = BTreeMap::new();
    let mut omitted_genres = Vec::new();
    for (g, (vals, total)) in genre {
        if (total as f64) / (runs.len() as f64) < min_genre_tracks as f64 {
            omitted_genres.push(g);
        } else {
            genre_top5.insert(g, vals);
        }
    }
    Ok(Breakdown {
        genre_top5,
        omitted_genres,
        bucket_top1,
    })
}

fn summary_csv(groups: &[(String, Vec<f64>)], key: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([key, "n_runs", "mean", "std", "min", "max"])?;
    for (k, v) in groups {
        let s = Summary::of(v)?;
        w.write_record([
            k.clone(),
            s.n.to_string(),
            format!("{:.6}", s.mean),
            format!("{:.6}", s.std),
            format!("{:.6}", s.min),
            format!("{:.6}", s.max),
        ])?;
    }
    finish(w)
}

impl Breakdown {
    fn bucket_groups(&self) -> Vec<(String, Vec<f64>)> {
        BUCKETS
            .iter()
            .filter_map(|b| self.bucket_top1.get(*b).map(|v| (b.to_string(), v.clone())))
            .collect()
    }

    fn genre_groups(&self) -> Vec<(String, Vec<f64>)> {
        self.genre_top5.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn genre_csv(&self) -> Result<String> {
        summary_csv(&self.genre_groups(), "genre")
    }

    pub fn bucket_csv(&self) -> Result<String> {
        summary_csv(&self.bucket_groups(), "bucket")
    }

    /// Writes `genre_top5.csv`, `bucket_top1.csv` and matching SVG box plots.
    pub fn write(&self, dir: &Path, title: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("genre_top5.csv"), self.genre_csv()?.as_bytes())?;
        write_atomic(&dir.join("bucket_top1.csv"), self.bucket_csv()?.as_bytes())?;
        let genre = box_plot_svg(&self.genre_groups(), &format!("{title}: top-5 by genre"), "top-5 accuracy")?;
        write_atomic(&dir.join("genre_top5.svg"), genre.as_bytes())?;
        let bucket = box_plot_svg(
            &self.bucket_groups(),
            &format!("{title}: top-1 by training tracks per singer"),
            "top-1 accuracy",
        )?;
        write_atomic(&dir.join("bucket_top1.svg"), bucket.as_bytes())?;
        Ok(())
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        what: "plot",
        detail: e.to_string(),
    }
}

/// One box per group on a shared [0, 1] axis, rendered to an SVG string.
pub fn box_plot_svg(groups: &[(String, Vec<f64>)], title: &str, y_label: &str) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let labels: Vec<&str> = groups.iter().map(|(k, _)| k.as_str()).collect();
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(labels.as_slice().into_segmented(), 0.0f32..1.0f32)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .y_desc(y_label)
            .disable_x_mesh()
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(groups.iter().zip(&labels).map(|((_, v), label)| {
                Boxplot::new_vertical(SegmentValue::CenterOf(label), &Quartiles::new(v))
                    .width(28)
                    .style(BLUE)
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
