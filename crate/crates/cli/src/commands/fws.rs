//! Factuality-weighted scores per method, human correlation and rank tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use factmark::fws::{
    aggregate_human, friedman_nemenyi, fws, normalize_likert, read_human_ratings,
    sensitivity_sweep, AspectScores, FriedmanNemenyi, FwsConfig, RatingMatrix, SweepRow,
};

use super::{render_table, Ctx};
use crate::args::FwsArgs;
use crate::commands::judge::JudgeRecord;
use crate::{io, usage};

/// Aspect scores of one generated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectRow {
    pub id: String,
    pub method: String,
    #[serde(flatten)]
    pub scores: AspectScores,
}

fn likert(v: [u8; 3]) -> Result<AspectScores> {
    let n = |x: u8| normalize_likert(x as f64, 1.0, 5.0);
    Ok(AspectScores::new(n(v[0])?, n(v[1])?, n(v[2])?)?)
}

/// Reads aspect rows, expanding judge output into a row for the watermarked
/// answer (its method) and one for the unwatermarked answer (`none`).
pub fn read_aspects(path: &Path) -> Result<Vec<AspectRow>> {
    let mut rows = Vec::new();
    for v in io::read_jsonl::<Value>(path)? {
        if v.get("watermarked").is_some() {
            let r: JudgeRecord = serde_json::from_value(v)
                .map_err(|e| usage!("{}: bad judge record: {e}", path.display()))?;
            if let (Some(w), Some(u)) = (r.watermarked, r.unwatermarked) {
                rows.push(AspectRow { id: r.id.clone(), method: r.method, scores: likert(w)? });
                rows.push(AspectRow { id: r.id, method: "none".into(), scores: likert(u)? });
            }
        } else {
            let r: AspectRow = serde_json::from_value(v)
                .map_err(|e| usage!("{}: bad aspect record: {e}", path.display()))?;
            r.scores.validate()?;
            rows.push(r);
        }
    }
    rows.sort_by(|a, b| (&a.method, &a.id).cmp(&(&b.method, &b.id)));
    rows.dedup_by(|a, b| a.method == b.method && a.id == b.id);
    if rows.is_empty() {
        return Err(usage!("{} has no usable aspect scores", path.display()));
    }
    Ok(rows)
}

pub fn parse_configs(spec: Option<&str>) -> Result<Vec<FwsConfig>> {
    let Some(spec) = spec else {
        return Ok(FwsConfig::study_configs());
    };
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (a, b) = s.split_once(':').ok_or_else(|| usage!("config '{s}' is not alpha:beta"))?;
            let num = |x: &str| x.trim().parse::<f64>().map_err(|_| usage!("bad number in config '{s}'"));
            Ok(FwsConfig::new(num(a)?, num(b)?)?)
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|c| if c.is_empty() { Err(usage!("--configs lists no weightings")) } else { Ok(c) })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodFws {
    pub method: String,
    pub items: usize,
    /// Mean FWS under each configuration, in order.
    pub mean_fws: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankTest {
    pub config: FwsConfig,
    pub result: FriedmanNemenyi,
}

#[derive(Debug, Clone, Serialize)]
pub struct FwsReport {
    pub configs: Vec<FwsConfig>,
    pub methods: Vec<MethodFws>,
    /// Absent when no human ratings were given.
    pub correlations: Option<Vec<SweepRow>>,
    pub matched_human_items: usize,
    pub rank_tests: Vec<RankTest>,
}

fn config_label(c: &FwsConfig) -> String {
    format!("a={:.3},b={:.3}", c.alpha, c.beta)
}

/// Human ratings are keyed by item id when only one method is present, and
/// by `method:id` otherwise.
fn human_pairs(rows: &[AspectRow], human: &BTreeMap<String, AspectScores>) -> (Vec<AspectScores>, Vec<f64>) {
    let single = rows.iter().map(|r| &r.method).collect::<BTreeSet<_>>().len() == 1;
    rows.iter()
        .filter_map(|r| {
            let key = if single { r.id.clone() } else { format!("{}:{}", r.method, r.id) };
            human.get(&key).map(|h| (r.scores, h.mean()))
        })
        .unzip()
}

pub fn build(rows: &[AspectRow], configs: &[FwsConfig], human: Option<&BTreeMap<String, AspectScores>>) -> Result<(FwsReport, Vec<String>)> {
    let mut notices = Vec::new();
    let mut by_method: BTreeMap<&str, Vec<&AspectRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let methods = by_method
        .iter()
        .map(|(m, rs)| MethodFws {
            method: m.to_string(),
            items: rs.len(),
            mean_fws: configs
                .iter()
                .map(|c| rs.iter().map(|r| fws(&r.scores, c)).sum::<f64>() / rs.len() as f64)
                .collect(),
        })
        .collect();

    let (correlations, matched) = match human {
        None => {
            notices.push("no human ratings given; correlations skipped".to_string());
            (None, 0)
        }
        Some(h) => {
            let (scores, target) = human_pairs(rows, h);
            if scores.len() < 3 {
                notices.push(format!("only {} items have human ratings; correlations skipped", scores.len()));
                (None, scores.len())
            } else {
                (Some(sensitivity_sweep(&scores, &target, configs)?), scores.len())
            }
        }
    };

    let mut rank_tests = Vec::new();
    if by_method.len() < 2 {
        notices.push("rank tests need at least two methods; skipped".to_string());
    } else {
        let columns: Vec<String> = by_method.keys().map(|m| m.to_string()).collect();
        let ids: BTreeSet<&str> = rows.iter().map(|r| r.id.as_str()).collect();
        let cell: BTreeMap<(&str, &str), &AspectScores> =
            rows.iter().map(|r| ((r.method.as_str(), r.id.as_str()), &r.scores)).collect();
        for c in configs {
            let matrix = RatingMatrix::new(
                columns.clone(),
                ids.iter()
                    .map(|id| columns.iter().map(|m| cell.get(&(m.as_str(), *id)).map(|s| fws(s, c))).collect())
                    .collect(),
            );
            match friedman_nemenyi(&matrix) {
                Ok(result) => rank_tests.push(RankTest { config: *c, result }),
                Err(e) => {
                    notices.push(format!("rank test for {} skipped: {e}", config_label(c)));
                    break;
                }
            }
        }
    }
    Ok((FwsReport { configs: configs.to_vec(), methods, correlations, matched_human_items: matched, rank_tests }, notices))
}

pub fn render(report: &FwsReport) -> String {
    let labels: Vec<String> = report.configs.iter().map(config_label).collect();
    let mut head = vec!["method"];
    head.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|m| {
            let mut r = vec![m.method.clone()];
            r.extend(m.mean_fws.iter().map(|v| format!("{v:.4}")));
            r
        })
        .collect();
    let mut out = render_table(&head, &rows);
    if let Some(corr) = &report.correlations {
        out.push('\n');
        let rows: Vec<Vec<String>> = corr
            .iter()
            .map(|s| {
                let r = if s.defined { format!("{:.4}", s.pearson_r) } else { "undefined".into() };
                vec![config_label(&s.config), r]
            })
            .collect();
        out.push_str(&render_table(&["config", "pearson r"], &rows));
    }
    if let Some(t) = report.rank_tests.first() {
        out.push('\n');
        out.push_str(&format!(
            "Friedman ({}): chi2 = {:.3}, p = {:.4}, critical difference = {:.3}\n",
            config_label(&t.config),
            t.result.statistic,
            t.result.friedman_p,
            t.result.critical_difference
        ));
        let rows: Vec<Vec<String>> = t
            .result
            .pairwise
            .iter()
            .map(|p| vec![format!("{} vs {}", p.a, p.b), format!("{:.3}", p.q), format!("{:.4}", p.p)])
            .collect();
        out.push_str(&render_table(&["pair", "q", "p"], &rows));
    }
    out
}

pub fn run(ctx: &Ctx, a: FwsArgs) -> Result<()> {
    let configs = parse_configs(a.configs.as_deref())?;
    let rows = read_aspects(&a.aspects)?;
    let human = match &a.human {
        Some(p) => Some(aggregate_human(&read_human_ratings(io::open(p)?)?)?),
        None => None,
    };
    let (report, notices) = build(&rows, &configs, human.as_ref())?;
    for n in &notices {
        eprintln!("note: {n}");
    }
    let mut inputs: Vec<&Path> = vec![&a.aspects];
    inputs.extend(a.human.as_deref());
    let header = ctx.header("fws", json!({"configs": configs}))?.inputs(inputs)?;
    io::write_json_report(&a.out, &header, &report)?;
    let table = render(&report);
    print!("{table}");
    if let Some(t) = &a.table {
        std::fs::write(t, &table)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: usize, method: &str, f: f64) -> AspectRow {
        AspectRow {
            id: format!("i{id:02}"),
            method: method.into(),
            scores: AspectScores::new(0.5, 0.5, f).unwrap(),
        }
    }

    #[test]
    fn configs_default_and_custom() {
        assert_eq!(parse_configs(None).unwrap().len(), 5);
        let c = parse_configs(Some("1:2, 0.25:0.5")).unwrap();
        assert_eq!(c[0], c[1]);
        assert!(parse_configs(Some("0.5")).is_err());
        assert!(parse_configs(Some(",")).is_err());
    }

    #[test]
    fn perfect_agreement_gives_unit_correlation() {
        let rows: Vec<_> = (0..10).map(|i| row(i, "kgw", i as f64 / 10.0)).collect();
        // Human ratings identical to the automatic aspects.
        let human: BTreeMap<String, AspectScores> = rows
            .iter()
            .map(|r| (r.id.clone(), AspectScores::new(0.5, 0.5, r.scores.factual_accuracy).unwrap()))
            .collect();
        let (report, _) = build(&rows, &FwsConfig::study_configs(), Some(&human)).unwrap();
        for s in report.correlations.unwrap() {
            assert!((s.pearson_r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_human_skips_correlations() {
        let rows: Vec<_> = (0..6)
            .flat_map(|i| [row(i, "kgw", 0.2), row(i, "none", 0.9)])
            .collect();
        let (report, notices) = build(&rows, &FwsConfig::study_configs(), None).unwrap();
        assert!(report.correlations.is_none());
        assert!(notices[0].contains("correlations skipped"));
        assert_eq!(report.rank_tests.len(), 5);
        assert!(report.methods[1].mean_fws[0] > report.methods[0].mean_fws[0]);
    }

    #[test]
    fn judge_records_expand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"method\":\"kgw\",\"swapped\":true,\"watermarked\":[5,1,3],\"unwatermarked\":[1,1,1]}\n\
             {\"id\":\"b\",\"method\":\"kgw\",\"swapped\":false,\"watermarked\":null,\"unwatermarked\":null,\"error\":\"x\"}\n",
        )
        .unwrap();
        let rows = read_aspects(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "kgw");
        assert_eq!(rows[0].scores, AspectScores::new(1.0, 0.0, 0.5).unwrap());
        assert_eq!(rows[1].method, "none");
    }
}
