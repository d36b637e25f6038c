//! Trace analysis: best-so-far curves, per-iteration means, wall-clock
//! speedup against a paraphrase run, and cross-run aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::model::Method;
use crate::trace::Trace;

/// State at the end of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub iteration: u32,
    /// Non-initial prompts generated up to and including this iteration.
    pub prompts: u64,
    /// Running max over non-failed candidates, initial prompt included.
    pub best: f64,
    pub wall_clock_ms: u64,
}

/// One boundary per iteration that recorded candidates, in iteration order.
/// Iterations before the first successful score are skipped.
pub fn boundaries(trace: &Trace) -> Result<Vec<Boundary>, MetricsError> {
    #[derive(Default)]
    struct Group {
        prompts: u64,
        ms: u64,
        best: Option<f64>,
    }
    let mut groups: BTreeMap<u32, Group> = BTreeMap::new();
    for event in &trace.events {
        let Some(c) = event.candidate() else { continue };
        let g = groups.entry(c.iteration).or_default();
        g.prompts = g.prompts.max(event.prompts_generated_cumulative);
        g.ms = g.ms.max(event.wall_clock_ms_cumulative);
        if let Some(s) = c.score() {
            g.best = Some(g.best.map_or(s, |b| b.max(s)));
        }
    }
    if groups.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut running: Option<f64> = None;
    for (iteration, g) in groups {
        if let Some(b) = g.best {
            running = Some(running.map_or(b, |r| r.max(b)));
        }
        if let Some(best) = running {
            out.push(Boundary {
                iteration,
                prompts: g.prompts,
                best,
                wall_clock_ms: g.ms,
            });
        }
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub run_id: String,
    pub method: String,
    /// `(prompts generated, best so far)` with strictly increasing x.
    pub points: Vec<(u64, f64)>,
}

impl Curve {
    /// Step-resample onto `grid`: each x takes the last point at or before it.
    pub fn resample(&self, grid: &[u64]) -> Curve {
        let points = grid
            .iter()
            .filter_map(|&x| {
                self.points
                    .iter()
                    .take_while(|(px, _)| *px <= x)
                    .last()
                    .map(|(_, y)| (x, *y))
            })
            .collect();
        Curve {
            run_id: self.run_id.clone(),
            method: self.method.clone(),
            points,
        }
    }

    pub fn final_best(&self) -> Option<f64> {
        self.points.last().map(|(_, y)| *y)
    }

    /// Trapezoid area under the curve over its own x range.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

fn method_of(trace: &Trace) -> String {
    trace
        .meta
        .config
        .get("method")
        .and_then(|m| m.as_str())
        .unwrap_or("unknown")
        .to_string()
}

pub fn best_so_far_curve(trace: &Trace) -> Result<Curve, MetricsError> {
    let mut points: Vec<(u64, f64)> = Vec::new();
    for b in boundaries(trace)? {
        match points.last_mut() {
            Some(last) if last.0 >= b.prompts => last.1 = last.1.max(b.best),
            _ => points.push((b.prompts, b.best)),
        }
    }
    Ok(Curve {
        run_id: trace.run_id.clone(),
        method: method_of(trace),
        points,
    })
}

/// Mean score of non-failed candidates per iteration (initial excluded).
/// Iterations whose candidates all failed are omitted.
pub fn per_iteration_mean(trace: &Trace) -> Result<Vec<(u32, f64)>, MetricsError> {
    let mut sums: BTreeMap<u32, (f64, usize, usize)> = BTreeMap::new();
    let mut any = false;
    for c in trace.candidates() {
        any = true;
        if c.iteration == 0 {
            continue;
        }
        let e = sums.entry(c.iteration).or_insert((0.0, 0, 0));
        e.2 += 1;
        if let Some(s) = c.score() {
            e.0 += s;
            e.1 += 1;
        }
    }
    if !any {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(sums
        .into_iter()
        .filter_map(|(it, (sum, n, total))| {
            if n == 0 {
                log::warn!("iteration {it}: all {total} candidates failed; omitted");
                None
            } else {
                Some((it, sum / n as f64))
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub paraphrase_peak: f64,
    pub paraphrase_total_ms: u64,
    pub win_ms: Option<u64>,
    pub prompts_at_win: Option<u64>,
    pub speedup: Option<f64>,
}

/// `paraphrase_total_ms / win_ms`; a zero win time is floored at 1 ms.
pub fn speedup_ratio(paraphrase_total_ms: u64, win_ms: u64) -> f64 {
    paraphrase_total_ms as f64 / win_ms.max(1) as f64
}

fn ensure_complete(trace: &Trace, label: &str) -> Result<(), MetricsError> {
    if trace.is_complete() {
        Ok(())
    } else {
        Err(MetricsError::IncompleteTrace(format!("{label} trace {} did not reach its final iteration", trace.run_id)))
    }
}

/// Wall-clock time for `optimized` to match the paraphrase run's peak,
/// checked at iteration boundaries only.
pub fn speedup(optimized: &Trace, paraphrase: &Trace) -> Result<SpeedupReport, MetricsError> {
    ensure_complete(optimized, "optimized")?;
    ensure_complete(paraphrase, "paraphrase")?;
    let para = boundaries(paraphrase)?;
    let paraphrase_peak = para.last().map(|b| b.best).ok_or(MetricsError::EmptyTrace)?;
    let paraphrase_total_ms = paraphrase.events.iter().map(|e| e.wall_clock_ms_cumulative).max().unwrap_or(0);
    let win = boundaries(optimized)?.into_iter().find(|b| b.best >= paraphrase_peak);
    Ok(SpeedupReport {
        paraphrase_peak,
        paraphrase_total_ms,
        win_ms: win.map(|b| b.wall_clock_ms),
        prompts_at_win: win.map(|b| b.prompts),
        speedup: win.map(|b| speedup_ratio(paraphrase_total_ms, b.wall_clock_ms)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub x: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub method: String,
    pub run_count: usize,
    pub points: Vec<AggregatePoint>,
}

/// Pointwise mean and sample (n - 1) standard deviation; std is 0 for one run.
pub fn aggregate(curves: &[Curve]) -> Result<AggregateCurve, MetricsError> {
    let first = curves.first().ok_or(MetricsError::NoCurves)?;
    let grid: Vec<u64> = first.points.iter().map(|(x, _)| *x).collect();
    if curves
        .iter()
        .any(|c| c.points.len() != grid.len() || c.points.iter().zip(&grid).any(|((x, _), g)| x != g))
    {
        return Err(MetricsError::GridMismatch);
    }
    let n = curves.len() as f64;
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ys: Vec<f64> = curves.iter().map(|c| c.points[i].1).collect();
            let mean = ys.iter().sum::<f64>() / n;
            let std = if curves.len() > 1 {
                (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            AggregatePoint { x, mean, std }
        })
        .collect();
    let method = if curves.iter().all(|c| c.method == first.method) {
        first.method.clone()
    } else {
        "mixed".to_string()
    };
    Ok(AggregateCurve {
        method,
        run_count: curves.len(),
        points,
    })
}

pub const CURVE_CSV_HEADER: &str = "x,mean,std,method,run_count";

pub fn curves_to_csv(curves: &[AggregateCurve]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for c in curves {
        for p in &c.points {
            out.push_str(&format!("{},{},{},{},{}\n", p.x, p.mean, p.std, c.method, c.run_count));
        }
    }
    out
}

pub fn curves_to_json(curves: &[AggregateCurve]) -> String {
    serde_json::to_string_pretty(curves).expect("curves serialize")
}

/// Iteration grid `0, K, 2K, ..., N*K` for a method's budget.
pub fn budget_grid(iterations: u32, candidates: u32) -> Vec<u64> {
    (0..=u64::from(iterations)).map(|t| t * u64::from(candidates)).collect()
}

pub fn is_paraphrase(trace: &Trace) -> bool {
    method_of(trace) == Method::Paraphrase.as_str()
}
