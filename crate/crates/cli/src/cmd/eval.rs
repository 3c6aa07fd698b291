use std::path::PathBuf;

use gqnloc_core::localizer::metric_mse;
use gqnloc_core::ModelKind;
use gqnloc_nn::Parallelism;
use gqnloc_world::{CameraPose, Task};

use super::localize::{localize_task, render_map, settings, Model, Outcome};
use super::{create_out, fmt, load_dataset, record_dataset, test_task, to_json, truncate_context, write_text};
use crate::args::{Dim, EvalArgs};
use crate::error::{CliError, Result};
use crate::manifest::ManifestBuilder;

pub const REPORT_HEADER: &str = "model,attention,context_size,dim,mse,logprob_gt,vicinity_logmass,n_tasks,status";
pub const REPORT_FILE: &str = "report.csv";
pub const TASKS_FILE: &str = "tasks.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// One report row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub model: String,
    pub attention: bool,
    pub context_size: usize,
    pub dim: Dim,
    pub mse: f64,
    pub logprob_gt: f64,
    pub vicinity: f64,
    pub n_tasks: usize,
    pub status: String,
}

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.model,
            self.attention,
            self.context_size,
            dim_name(self.dim),
            fmt(self.mse),
            fmt(self.logprob_gt),
            fmt(self.vicinity),
            self.n_tasks,
            self.status.replace(',', ";")
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.splitn(9, ',').collect();
        if f.len() != 9 {
            return None;
        }
        let num = |s: &str| s.parse::<f64>().ok();
        Some(Row {
            model: f[0].into(),
            attention: f[1].parse().ok()?,
            context_size: f[2].parse().ok()?,
            dim: match f[3] {
                "xy" => Dim::Xy,
                "yaw" => Dim::Yaw,
                _ => return None,
            },
            mse: num(f[4])?,
            logprob_gt: num(f[5])?,
            vicinity: num(f[6])?,
            n_tasks: f[7].parse().ok()?,
            status: f[8].into(),
        })
    }
}

pub fn parse_report(text: &str) -> Option<Vec<Row>> {
    let mut lines = text.lines();
    if lines.next()? != REPORT_HEADER {
        return None;
    }
    lines.filter(|l| !l.is_empty()).map(Row::parse).collect()
}

pub fn dim_name(d: Dim) -> &'static str {
    d.search().name()
}

/// The four model slots of the report.
pub fn slots(a: &EvalArgs) -> Vec<(&'static str, ModelKind, bool, Option<PathBuf>)> {
    vec![
        ("gen-att", ModelKind::Generative, true, a.gen_att.clone()),
        ("gen-par", ModelKind::Generative, false, a.gen_par.clone()),
        ("disc-att", ModelKind::Discriminative, true, a.disc_att.clone()),
        ("disc-par", ModelKind::Discriminative, false, a.disc_par.clone()),
    ]
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// MSE counts as non-increasing over growing context if at most one step
/// goes up and that step is within 10% of the smaller value.
pub fn mostly_non_increasing(mse: &[f64]) -> bool {
    let ups: Vec<(f64, f64)> = mse.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect();
    mse.iter().all(|v| v.is_finite()) && (ups.is_empty() || (ups.len() == 1 && ups[0].1 <= ups[0].0 * 1.1))
}

fn summary(rows: &[Row], contexts: &[usize]) -> String {
    let mut s = String::new();
    let ok = |r: &&Row| r.status.starts_with("ok");
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.dedup();
    for m in &models {
        for d in [Dim::Xy, Dim::Yaw] {
            let seq: Vec<f64> = contexts
                .iter()
                .filter_map(|&c| rows.iter().filter(ok).find(|r| r.model == *m && r.dim == d && r.context_size == c))
                .map(|r| r.mse)
                .collect();
            if seq.len() == contexts.len() && seq.len() > 1 {
                let shown: Vec<String> = seq.iter().map(|v| format!("{v:.5}")).collect();
                s.push_str(&format!(
                    "mse {m} {} over contexts {:?}: {} non-increasing={}\n",
                    dim_name(d),
                    contexts,
                    shown.join(" -> "),
                    mostly_non_increasing(&seq)
                ));
            }
        }
    }
    let vic = |m: &str| mean(rows.iter().filter(ok).filter(|r| r.model == m && r.dim == Dim::Xy).map(|r| r.vicinity));
    for m in &models {
        s.push_str(&format!("vicinity {m}: {}\n", fmt(vic(m))));
    }
    let (d, g) = (vic("disc-att"), vic("gen-att"));
    if d.is_finite() && g.is_finite() {
        s.push_str(&format!("vicinity ordering disc-att > gen-att: {} ({} vs {})\n", d > g, fmt(d), fmt(g)));
    }
    s
}

pub fn run(a: EvalArgs, argv: &[String]) -> Result<()> {
    let slots = slots(&a);
    if slots.iter().all(|s| s.3.is_none()) {
        return Err(CliError::Usage("give at least one of --gen-att, --gen-par, --disc-att, --disc-par".into()));
    }
    if a.contexts.is_empty() || a.dims.is_empty() || a.tasks == 0 {
        return Err(CliError::Usage("--contexts, --dims and --tasks must be non-empty".into()));
    }
    let ds = load_dataset(&a.data)?;
    let out = create_out(&crate::resolve_out(a.out.as_deref(), "eval"))?;
    let max_ctx = *a.contexts.iter().max().expect("non-empty");
    let base: Vec<Task> = (0..a.tasks).map(|i| test_task(&ds.test, i, max_ctx, a.seed)).collect::<Result<_>>()?;
    let mut m = ManifestBuilder::new("eval", argv, &out);
    record_dataset(&mut m, &a.data)?;
    let mut rows = Vec::new();
    let mut per_task = String::from("model,context_size,dim,task,episode,target_index,squared_error,logprob_gt,vicinity_logmass\n");
    let mut maps = Vec::new();
    for (name, kind, attention, path) in &slots {
        let Some(path) = path else { continue };
        let loaded = Model::load(path).and_then(|model| {
            let (k, att) = (match &model {
                Model::Gen(_) => ModelKind::Generative,
                Model::Disc(_) => ModelKind::Discriminative,
            }, model.config().attention);
            if k != *kind || att != *attention {
                return Err(CliError::Usage(format!(
                    "{}: holds a {} model with attention={att}, expected {} with attention={attention}",
                    path.display(),
                    k.name(),
                    kind.name()
                )));
            }
            Ok(model)
        });
        let model = match loaded {
            Ok(model) => {
                m.input(path)?;
                model
            }
            Err(e) if a.allow_partial => {
                for &c in &a.contexts {
                    for &d in &a.dims {
                        rows.push(Row {
                            model: name.to_string(),
                            attention: *attention,
                            context_size: c,
                            dim: d,
                            mse: f64::NAN,
                            logprob_gt: f64::NAN,
                            vicinity: f64::NAN,
                            n_tasks: 0,
                            status: format!("error: {e}"),
                        });
                    }
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        for &c in &a.contexts {
            if c == 0 {
                return Err(CliError::Usage("context sizes must be positive".into()));
            }
            eprintln!("{name}: context {c}, {} tasks", base.len());
            let outer = Parallelism::global();
            let results: Vec<Result<Vec<Outcome>>> = gqnloc_nn::par::map_range(outer, base.len(), |i| {
                let task = truncate_context(&base[i], c);
                let s = settings(&a.search, gqnloc_core::trainer::derive(a.seed, 13, i as u64), outer);
                localize_task(&model, &task, &a.dims, &s)
            });
            let results: Vec<Vec<Outcome>> = results.into_iter().collect::<Result<_>>()?;
            for (di, &d) in a.dims.iter().enumerate() {
                let outs: Vec<&Outcome> = results.iter().map(|r| &r[di]).collect();
                let res: Vec<_> = outs.iter().map(|o| o.result.clone()).collect();
                let untrained = outs.iter().any(|o| !o.result.warnings.is_empty());
                rows.push(Row {
                    model: name.to_string(),
                    attention: *attention,
                    context_size: c,
                    dim: d,
                    mse: metric_mse(&res),
                    logprob_gt: mean(outs.iter().map(|o| o.logprob_gt)),
                    vicinity: mean(outs.iter().filter_map(|o| o.vicinity)),
                    n_tasks: outs.len(),
                    status: if untrained { "ok (untrained model)".into() } else { "ok".into() },
                });
                for (i, o) in outs.iter().enumerate() {
                    per_task.push_str(&format!(
                        "{name},{c},{},{i},{},{},{},{},{}\n",
                        dim_name(d),
                        i % ds.test.len(),
                        base[i].target_index,
                        fmt(o.result.squared_error),
                        fmt(o.logprob_gt),
                        fmt(o.vicinity.unwrap_or(f64::NAN))
                    ));
                    if i < a.maps {
                        let context: Vec<CameraPose> = base[i].context[..c].iter().map(|f| f.pose).collect();
                        let file = format!("map_{name}_c{c}_{}_t{i:02}.ppm", dim_name(d));
                        render_map(o, &context, 4).save(&out.join(&file))?;
                        maps.push(file);
                    }
                }
            }
        }
    }
    let mut report = String::from(REPORT_HEADER);
    report.push('\n');
    for r in &rows {
        report.push_str(&r.csv());
        report.push('\n');
    }
    write_text(&out.join(REPORT_FILE), &report)?;
    write_text(&out.join(TASKS_FILE), &per_task)?;
    let text = summary(&rows, &a.contexts);
    write_text(&out.join(SUMMARY_FILE), &text)?;
    eprint!("{text}");
    m.config(serde_json::json!({ "args": to_json(&a) }));
    m.seed("tasks", a.seed);
    for f in [REPORT_FILE, TASKS_FILE, SUMMARY_FILE] {
        m.output(f)?;
    }
    for f in &maps {
        m.output(f)?;
    }
    m.finish()?;
    Ok(())
}
