//! Simulation traces: per-step records, summary reductions and CSV I/O.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig15;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    /// Exact overlap and contour of touch per scenario obstacle.
    pub upsilon: Vec<f64>,
    pub contour: Vec<f64>,
    /// Obstacle was within sensing range when the command was planned.
    pub active: Vec<bool>,
    /// Drone and obstacle both inside the corridor while sensed.
    pub interaction: Vec<bool>,
    /// Smallest wall center distance minus combined radius, if walls exist.
    pub wall_clearance: Option<f64>,
    pub cost_terminal: f64,
    pub cost_smooth: f64,
    pub scp_iters: usize,
    pub solve_ms: f64,
    pub braked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub completed: bool,
    pub steps: usize,
    pub completion_time: Option<f64>,
    pub path_length: f64,
    pub min_ct: Vec<Option<f64>>,
    pub max_upsilon: Vec<Option<f64>>,
    /// Range of contour of touch over interaction steps, all obstacles.
    pub interaction_ct: Option<[f64; 2]>,
    pub min_wall_clearance: Option<f64>,
    pub braked_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub name: String,
    pub dim: usize,
    pub tau: f64,
    pub n_obstacles: usize,
    pub start: [f64; 3],
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

fn fold_opt(acc: Option<f64>, v: f64, pick: fn(f64, f64) -> f64) -> Option<f64> {
    Some(acc.map_or(v, |a| pick(a, v)))
}

/// Reduces `records` to the summary fields.
pub fn summarize(name: &str, start: [f64; 3], n_obstacles: usize, records: &[StepRecord], completed: bool) -> Summary {
    let mut path_length = 0.0;
    let mut prev = start;
    for r in records {
        path_length += (0..3).map(|i| (r.pos[i] - prev[i]).powi(2)).sum::<f64>().sqrt();
        prev = r.pos;
    }
    let mut min_ct = vec![None; n_obstacles];
    let mut max_upsilon = vec![None; n_obstacles];
    let mut band: Option<[f64; 2]> = None;
    let mut min_wall = None;
    for r in records {
        for k in 0..n_obstacles {
            min_ct[k] = fold_opt(min_ct[k], r.contour[k], f64::min);
            max_upsilon[k] = fold_opt(max_upsilon[k], r.upsilon[k], f64::max);
            if r.interaction.get(k).copied().unwrap_or(false) {
                let c = r.contour[k];
                band = Some(band.map_or([c, c], |[lo, hi]| [lo.min(c), hi.max(c)]));
            }
        }
        if let Some(w) = r.wall_clearance {
            min_wall = fold_opt(min_wall, w, f64::min);
        }
    }
    Summary {
        name: name.to_string(),
        completed,
        steps: records.len(),
        completion_time: if completed {
            Some(records.last().map_or(0.0, |r| r.t))
        } else {
            None
        },
        path_length,
        min_ct,
        max_upsilon,
        interaction_ct: band,
        min_wall_clearance: min_wall,
        braked_steps: records.iter().filter(|r| r.braked).count(),
    }
}

impl SimTrace {
    pub fn new(
        name: String,
        dim: usize,
        tau: f64,
        n_obstacles: usize,
        start: [f64; 3],
        records: Vec<StepRecord>,
        completed: bool,
    ) -> Self {
        let summary = summarize(&name, start, n_obstacles, &records, completed);
        SimTrace {
            name,
            dim,
            tau,
            n_obstacles,
            start,
            records,
            summary,
        }
    }

    /// Worst overlap over all records and obstacles.
    pub fn max_upsilon(&self) -> Option<f64> {
        self.summary.max_upsilon.iter().flatten().copied().reduce(f64::max)
    }

    pub fn min_contour(&self) -> Option<f64> {
        self.summary.min_ct.iter().flatten().copied().reduce(f64::min)
    }
}

pub fn csv_header(n_obstacles: usize) -> String {
    let mut cols: Vec<String> = ["t", "x", "y", "z", "vx", "vy", "vz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in 1..=n_obstacles {
        cols.push(format!("obs{k}_upsilon"));
        cols.push(format!("obs{k}_ct"));
    }
    cols.extend(
        ["cost_terminal", "cost_smooth", "scp_iters", "solve_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Writes the CSV form of `trace`; returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &SimTrace, mut out: W) -> Result<usize> {
    let mut text = csv_header(trace.n_obstacles);
    text.push('\n');
    for r in &trace.records {
        let mut fields = vec![sig15(r.t)];
        fields.extend(r.pos.iter().chain(r.vel.iter()).map(|v| sig15(*v)));
        for k in 0..trace.n_obstacles {
            fields.push(sig15(r.upsilon[k]));
            fields.push(sig15(r.contour[k]));
        }
        fields.push(sig15(r.cost_terminal));
        fields.push(sig15(r.cost_smooth));
        fields.push(r.scp_iters.to_string());
        fields.push(sig15(r.solve_ms));
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())?;
    Ok(text.len())
}

pub fn write_summary<W: Write>(summary: &Summary, mut out: W) -> Result<usize> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| Error::Trace(e.to_string()))?;
    text.push('\n');
    out.write_all(text.as_bytes())?;
    Ok(text.len())
}

/// Writes `<path>` (CSV) and `<path>.summary.json`; returns total bytes.
pub fn write_trace_files(trace: &SimTrace, path: &Path) -> Result<usize> {
    let csv = write_trace(trace, std::fs::File::create(path)?)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".summary.json");
    let json = write_summary(&trace.summary, std::fs::File::create(side)?)?;
    Ok(csv + json)
}

/// Parses the CSV written by [`write_trace`]. Flags that the CSV does not
/// carry (active, interaction, wall clearance, braking) come back empty.
pub fn read_trace(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Trace("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 11 || !(cols.len() - 11).is_multiple_of(2) {
        return Err(Error::Trace(format!("unexpected column count {}", cols.len())));
    }
    let n_obs = (cols.len() - 11) / 2;
    if header != csv_header(n_obs) {
        return Err(Error::Trace("header does not match the trace schema".into()));
    }
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Trace(format!("line {}: expected {} fields", ln + 2, cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|_| Error::Trace(format!("line {}: bad number `{}`", ln + 2, f[i])))
        };
        let mut upsilon = Vec::with_capacity(n_obs);
        let mut contour = Vec::with_capacity(n_obs);
        for k in 0..n_obs {
            upsilon.push(num(7 + 2 * k)?);
            contour.push(num(8 + 2 * k)?);
        }
        let base = 7 + 2 * n_obs;
        records.push(StepRecord {
            t: num(0)?,
            pos: [num(1)?, num(2)?, num(3)?],
            vel: [num(4)?, num(5)?, num(6)?],
            upsilon,
            contour,
            active: Vec::new(),
            interaction: Vec::new(),
            wall_clearance: None,
            cost_terminal: num(base)?,
            cost_smooth: num(base + 1)?,
            scp_iters: f[base + 2]
                .parse()
                .map_err(|_| Error::Trace(format!("line {}: bad iteration count", ln + 2)))?,
            solve_ms: num(base + 3)?,
            braked: false,
        });
    }
    Ok(records)
}
