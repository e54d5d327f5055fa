//! Run directory contents: trajectory, summary record and certificates.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{epsilon_bound, FlockTarget, LyapunovRange, MissionResult, Phase, FLOCK_TOL};
use crate::dynamics::Params;
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::verify::{CertificateReport, FlockStatus};

use super::config::{Mission, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeRecord {
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub nodes: usize,
}

impl LatticeRecord {
    pub fn new(spec: &LatticeSpec) -> Self {
        Self {
            n: spec.dim(),
            d: spec.side(),
            nodes: spec.len(),
        }
    }

    pub fn spec(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.n, self.d)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleRecord {
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    pub t4: Option<f64>,
    pub t1_nodes: Vec<f64>,
    pub y_bar: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateStatus {
    pub check: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub violations: usize,
}

/// Everything needed to reproduce or re-certify a run.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub version: &'static str,
    pub mission: Mission,
    pub seed: u64,
    pub lattice: LatticeRecord,
    pub params: Params,
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub dt: f64,
    pub group_velocity: f64,
    pub flock_tol: f64,
    pub target: Option<FlockTarget>,
    pub schedule: ScheduleRecord,
    pub markers: Vec<(String, f64)>,
    pub offset: Option<f64>,
    pub flock_time: f64,
    pub max_control: f64,
    pub flock: FlockStatus,
    pub lyapunov_ranges: BTreeMap<Phase, LyapunovRange>,
    pub certificates: Vec<CertificateStatus>,
    pub all_passed: bool,
    pub config: BTreeMap<String, String>,
}

impl Summary {
    pub fn new(
        config: &RunConfig,
        target: Option<&FlockTarget>,
        result: &MissionResult,
        reports: &[CertificateReport],
    ) -> Self {
        let s = &result.schedule;
        Self {
            version: env!("CARGO_PKG_VERSION"),
            mission: config.mission,
            seed: config.seed,
            lattice: LatticeRecord::new(&config.spec),
            params: config.params,
            epsilon: s.epsilon,
            epsilon_max: epsilon_bound(&config.spec, &config.params),
            dt: config.options.dt,
            group_velocity: s.cruise,
            flock_tol: FLOCK_TOL,
            target: target.cloned(),
            schedule: ScheduleRecord {
                t0: s.t0,
                t1: s.t1,
                t2: s.t2,
                t3: s.t3,
                t4: s.t4,
                t1_nodes: s.t1_nodes.clone(),
                y_bar: s.y_bar,
            },
            markers: s.markers().into_iter().map(|(n, t)| (n.to_string(), t)).collect(),
            offset: result.offset,
            flock_time: result.flock_time,
            max_control: result.max_control,
            flock: result.flock.clone(),
            lyapunov_ranges: result.lyapunov_ranges.clone(),
            certificates: reports
                .iter()
                .map(|r| CertificateStatus {
                    check: r.check.clone(),
                    passed: r.passed,
                    worst_margin: r.worst_margin,
                    violations: r.violations,
                })
                .collect(),
            all_passed: reports.iter().all(|r| r.passed),
            config: config.entries.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// The part of `summary.json` that certification and plotting read back.
#[derive(Debug, Clone, Deserialize)]
pub struct SummaryHeader {
    pub lattice: LatticeRecord,
    pub params: Params,
    pub group_velocity: f64,
    pub flock_tol: f64,
    pub target: Option<FlockTarget>,
    pub markers: Vec<(String, f64)>,
}

impl SummaryHeader {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.json");
        let file = File::open(&path)
            .map_err(|e| Error::Invalid(format!("cannot open {}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
