//! Gnuplot script emission.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lattice::format_number;
use crate::trajectory::Trajectory;

use super::output::SummaryHeader;

/// Most rows inlined into the script.
const MAX_ROWS: usize = 5000;

/// Writes `plot.gp` into a finished run directory: V(t), the velocity
/// spread from the group velocity and max |u| against the bound M, with
/// the phase switching times drawn as vertical markers. The data is inlined
/// so the script runs on its own and renders `plot.png`.
pub fn emit_plots(dir: &Path) -> Result<PathBuf> {
    let traj_path = dir.join("trajectory.csv");
    if !traj_path.is_file() {
        return Err(Error::Invalid(format!("no trajectory file at {}", traj_path.display())));
    }
    let traj = Trajectory::read_csv(BufReader::new(File::open(&traj_path)?))?;
    let header = SummaryHeader::read(dir)?;
    let script = plot_script(&traj, &header);
    let path = dir.join("plot.gp");
    std::fs::write(&path, script)?;
    Ok(path)
}

pub fn plot_script(traj: &Trajectory, header: &SummaryHeader) -> String {
    let m = header.params.m;
    let group = header.group_velocity;
    let stride = traj.len().div_ceil(MAX_ROWS).max(1);

    let mut s = String::new();
    let _ = writeln!(s, "# Rendering: gnuplot plot.gp");
    let _ = writeln!(s, "set terminal pngcairo size 1000,1000");
    let _ = writeln!(s, "set output 'plot.png'");
    let _ = writeln!(s, "M = {m}");
    s.push_str("$data << EOD\n");
    let last = traj.len().saturating_sub(1);
    for (k, sample) in traj.samples.iter().enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        let spread = sample.v.iter().fold(0.0f64, |a, v| a.max((v - group).abs()));
        let umax = sample.u.iter().fold(0.0f64, |a, u| a.max(u.abs()));
        let row: Vec<String> = [sample.t, sample.lyapunov, spread, umax]
            .into_iter()
            .map(format_number)
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s.push_str("EOD\n");
    for (name, t) in &header.markers {
        let _ = writeln!(s, "set arrow from first {t}, graph 0 to first {t}, graph 1 nohead dashtype 2 lc rgb 'gray'");
        let _ = writeln!(s, "set label '{name}' at first {t}, graph 0.95 offset 0.5,0");
    }
    s.push_str("set multiplot layout 3,1\n");
    s.push_str("set xlabel 't'\n");
    s.push_str("set ylabel 'V'\n");
    s.push_str("plot $data using 1:2 with lines title 'V(t)'\n");
    let label = if group == 0.0 {
        "max_l |v_l|".to_string()
    } else {
        format!("max_l |v_l - {group}|")
    };
    s.push_str("set ylabel 'velocity spread'\n");
    let _ = writeln!(s, "plot $data using 1:3 with lines title '{label}'");
    s.push_str("set ylabel '|u|'\n");
    s.push_str("plot $data using 1:4 with lines title 'max_l |u_l|', M with lines dashtype 3 title 'M'\n");
    s.push_str("unset multiplot\n");
    s
}
