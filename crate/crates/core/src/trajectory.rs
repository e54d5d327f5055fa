//! Recorded mission trajectories and their CSV form.
//!
//! Columns: `t, x_0..x_{N-1}, v_0..v_{N-1}, u_0..u_{N-1}, V, phase`. Numbers
//! are written in shortest round-trip form so a re-read trajectory is
//! bit-identical to the one in memory.

use std::io::{BufRead, BufWriter, Write};

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::lattice::format_number;

/// One recorded step: state at the start of the step and the control the
/// active law applied there.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub lyapunov: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub nodes: usize,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new(nodes: usize) -> Self {
        Self {
            nodes,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: Sample) {
        debug_assert_eq!(sample.x.len(), self.nodes);
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Samples recorded while `phase` was active.
    pub fn in_phase(&self, phase: Phase) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.phase == phase)
    }

    pub fn header(&self) -> String {
        let n = self.nodes;
        let mut cols = vec!["t".to_string()];
        for prefix in ["x", "v", "u"] {
            cols.extend((0..n).map(|l| format!("{prefix}_{l}")));
        }
        cols.push("V".into());
        cols.push("phase".into());
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{}", self.header())?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            line.push_str(&format_number(s.t));
            for value in s.x.iter().chain(&s.v).chain(&s.u) {
                line.push(',');
                line.push_str(&format_number(*value));
            }
            line.push(',');
            line.push_str(&format_number(s.lyapunov));
            line.push(',');
            line.push_str(s.phase.tag());
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty trajectory file".into()))??;
        let columns = header.split(',').count();
        if columns < 3 || (columns - 3) % 3 != 0 {
            return Err(Error::Invalid(format!(
                "trajectory header has {columns} columns"
            )));
        }
        let nodes = (columns - 3) / 3;
        let mut traj = Trajectory::new(nodes);
        if traj.header() != header {
            return Err(Error::Invalid("unexpected trajectory header".into()));
        }

        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(Error::Invalid(format!(
                    "trajectory row {row}: expected {columns} fields, got {}",
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Invalid(format!("trajectory row {row}: bad number {s:?}")))
            };
            let block = |k: usize| -> Result<Vec<f64>> {
                fields[1 + k * nodes..1 + (k + 1) * nodes]
                    .iter()
                    .map(|s| num(s))
                    .collect()
            };
            let phase = Phase::from_tag(fields[columns - 1]).ok_or_else(|| {
                Error::Invalid(format!("trajectory row {row}: unknown phase {:?}", fields[columns - 1]))
            })?;
            traj.push(Sample {
                t: num(fields[0])?,
                x: block(0)?,
                v: block(1)?,
                u: block(2)?,
                lyapunov: num(fields[columns - 2])?,
                phase,
            });
        }
        Ok(traj)
    }
}
