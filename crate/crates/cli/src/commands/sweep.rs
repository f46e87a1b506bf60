//! Detection ROC over a grid of watermark hyperparameters.

use std::io::Write;

use anyhow::Result;
use log::info;
use serde_json::json;

use factmark::taskeval::{auroc, roc_curve, tpr_at_fpr0, Direction, RocPoint, ScorePair};
use factmark::wmcore::Method;

use super::{load_model, load_tasks, render_table, Ctx};
use crate::args::SweepArgs;
use crate::config::Config;
use crate::pipeline::{detect_all, generate_tasks, parse_method, DetectInput, DetectSettings, Detector};
use crate::{io, usage};

/// One grid point; unused parameters stay `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub pseudo_length: Option<usize>,
}

impl GridPoint {
    fn apply(&self, cfg: &mut Config) {
        if let Some(g) = self.gamma {
            cfg.kgw.gamma = g;
            cfg.sweet.gamma = g;
            cfg.dipmark.gamma_detect = g;
        }
        if let Some(d) = self.delta {
            cfg.kgw.delta = d;
            cfg.sweet.delta = d;
        }
        if let Some(a) = self.alpha {
            cfg.dipmark.alpha = a;
        }
        if let Some(n) = self.pseudo_length {
            cfg.expedit.pseudo_length = n;
        }
    }

    fn cells(&self) -> [String; 4] {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        [f(self.gamma), f(self.delta), f(self.alpha), self.pseudo_length.map_or(String::new(), |n| n.to_string())]
    }
}

/// The grid for `method`, defaulting to the standard sweep values.
pub fn grid(method: Method, a: &SweepArgs, cfg: &Config) -> Result<Vec<GridPoint>> {
    let empty = GridPoint { gamma: None, delta: None, alpha: None, pseudo_length: None };
    let points: Vec<GridPoint> = match method {
        Method::Kgw | Method::Sweet => {
            let deltas = a.deltas.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
            let gammas = a.gammas.clone().unwrap_or_else(|| vec![0.1, 0.25, 0.5]);
            gammas
                .iter()
                .flat_map(|&g| deltas.iter().map(move |&d| GridPoint { gamma: Some(g), delta: Some(d), ..empty }))
                .collect()
        }
        Method::Dipmark => {
            let alphas = a.alphas.clone().unwrap_or_else(|| vec![0.4, 0.45, 0.5]);
            let gammas = a.gammas.clone().unwrap_or_else(|| vec![cfg.dipmark.gamma_detect]);
            gammas
                .iter()
                .flat_map(|&g| alphas.iter().map(move |&al| GridPoint { gamma: Some(g), alpha: Some(al), ..empty }))
                .collect()
        }
        Method::Expedit => a
            .pseudo_lengths
            .clone()
            .unwrap_or_else(|| vec![100, 200, 300])
            .into_iter()
            .map(|n| GridPoint { pseudo_length: Some(n), ..empty })
            .collect(),
        Method::None => return Err(usage!("sweep needs a watermarking method")),
    };
    if points.is_empty() {
        return Err(usage!("empty parameter grid"));
    }
    Ok(points)
}

fn detector_for(method: Method) -> Detector {
    match method {
        Method::Kgw => Detector::Kgw,
        Method::Sweet => Detector::Sweet,
        Method::Dipmark => Detector::Dipmark,
        _ => Detector::Expedit,
    }
}

pub struct PointResult {
    pub point: GridPoint,
    pub roc: Vec<RocPoint>,
    pub tpr: f64,
    pub auroc: f64,
}

/// Whether TPR never drops as the swept parameter grows, per slice of the
/// other parameters. Returns one line per slice.
pub fn trend_notes(method: Method, results: &[PointResult]) -> Vec<String> {
    type Key = (Option<u64>, Option<u64>);
    let (name, primary): (&str, fn(&GridPoint) -> f64) = match method {
        Method::Kgw | Method::Sweet => ("delta", |p| p.delta.unwrap_or(0.0)),
        Method::Dipmark => ("alpha", |p| p.alpha.unwrap_or(0.0)),
        _ => ("pseudo_length", |p| p.pseudo_length.unwrap_or(0) as f64),
    };
    let slice = |p: &GridPoint| -> Key {
        match method {
            Method::Expedit => (None, None),
            _ => (p.gamma.map(f64::to_bits), None),
        }
    };
    let mut slices: Vec<(Key, Vec<(f64, f64)>)> = Vec::new();
    for r in results {
        let k = slice(&r.point);
        match slices.iter_mut().find(|s| s.0 == k) {
            Some(s) => s.1.push((primary(&r.point), r.tpr)),
            None => slices.push((k, vec![(primary(&r.point), r.tpr)])),
        }
    }
    slices
        .into_iter()
        .map(|(k, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let monotone = pts.windows(2).all(|w| w[1].1 >= w[0].1);
            let series: Vec<String> = pts.iter().map(|(x, t)| format!("{x}:{t:.3}")).collect();
            let at = k.0.map_or(String::new(), |g| format!(" at gamma={}", f64::from_bits(g)));
            format!(
                "TPR non-decreasing in {name}{at}: {} ({})",
                if monotone { "yes" } else { "no" },
                series.join(", ")
            )
        })
        .collect()
}

pub fn run(ctx: &mut Ctx, a: SweepArgs) -> Result<()> {
    let method = parse_method(&a.method)?;
    ctx.cfg.apply(&a.wm);
    if let Some(s) = a.seed {
        ctx.cfg.seed = s;
    }
    if let Some(m) = a.max_tokens {
        ctx.cfg.max_tokens = m;
    }
    ctx.cfg.require_key()?;
    let points = grid(method, &a, &ctx.cfg)?;
    let model = load_model(&a.model)?;
    let mut tasks = load_tasks(&a.tasks)?;
    if let Some(n) = a.n {
        tasks.truncate(n);
    }
    let detector = detector_for(method);

    let plain: Vec<DetectInput> = generate_tasks(&model, &tasks, Method::None, &ctx.cfg)?
        .iter()
        .map(DetectInput::from_generation)
        .collect();
    let mut results = Vec::new();
    for point in &points {
        let mut cfg = ctx.cfg.clone();
        point.apply(&mut cfg);
        info!("sweep point {point:?}");
        let marked: Vec<DetectInput> = generate_tasks(&model, &tasks, method, &cfg)?
            .iter()
            .map(DetectInput::from_generation)
            .collect();
        let settings = DetectSettings { detector, threshold: None, seed: cfg.seed };
        let pos = detect_all(&model, &marked, &settings, &cfg)?;
        let neg = detect_all(&model, &plain, &settings, &cfg)?;
        let pair = ScorePair::new(
            pos.iter().map(|s| s.score.statistic).collect(),
            neg.iter().map(|s| s.score.statistic).collect(),
            Direction::from(pos[0].score.kind),
        );
        results.push(PointResult {
            point: *point,
            roc: roc_curve(&pair)?,
            tpr: tpr_at_fpr0(&pair)?,
            auroc: auroc(&pair)?,
        });
    }

    let header = ctx
        .header("sweep", json!({"method": method, "n": tasks.len(), "config": ctx.cfg}))?
        .inputs([a.model.as_path(), a.tasks.as_path()])?;
    let comment = format!("# {}\n", serde_json::to_string(&header)?);
    let mut out = io::create(&a.out)?;
    out.write_all(comment.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "gamma", "delta", "alpha", "pseudo_length", "threshold", "fpr", "tpr"])?;
    for r in &results {
        for p in &r.roc {
            let mut rec = vec![method.to_string()];
            rec.extend(r.point.cells());
            rec.extend([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let head = ["method", "gamma", "delta", "alpha", "pseudo_length", "tpr_at_fpr0", "auroc"];
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut rec = vec![method.to_string()];
            rec.extend(r.point.cells());
            rec.extend([format!("{:.4}", r.tpr), format!("{:.4}", r.auroc)]);
            rec
        })
        .collect();
    if let Some(path) = &a.summary {
        let mut out = io::create(path)?;
        out.write_all(comment.as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(head)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    print!("{}", render_table(&head, &rows));
    for note in trend_notes(method, &results) {
        println!("{note}");
    }
    Ok(())
}
