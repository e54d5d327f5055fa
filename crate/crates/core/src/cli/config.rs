//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Unknown and repeated keys are
//! errors. Recognised keys and defaults:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `n`, `D` | spatial dimension, nodes per side | required |
//! | `alpha`, `beta`, `M` | rates and control bound | required |
//! | `gamma` | damping band parameter | 2·max{1, √(α³/β)/M} |
//! | `epsilon` | damping exit threshold | half the admissible maximum |
//! | `mission` | `thm1`, `thm2`, `thm3` or `hjb` | `thm1` |
//! | `seed`, `amplitude` | random initial data in [−A, A] | 0, 1 |
//! | `cover_index_sets` | spread initial speeds over all damping bands | false |
//! | `x0`, `v0` | explicit initial data (lists) | |
//! | `initial_file` | two lines: positions, velocities | |
//! | `target` | `sinusoid`, `constant` or `file` | `sinusoid` |
//! | `target_constant`, `target_file` | | 0 |
//! | `dt` | integrator step | 1e-3 |
//! | `out` | output directory | `out` |
//! | `control_variant` | `standard` or `simple` | `standard` |
//! | `y_bar_rule` | `mean` or `minimax` | `mean` |
//! | `phase1_timeout`, `horizon_cap`, `hold_time`, `stride` | | 1e4, 1e6, 1, 1 |
//! | `hjb_points`, `hjb_tol`, `hjb_max_sweeps`, `hjb_dt` | value iteration grid | 101, 1e-9, 100000, auto |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{epsilon_bound, ControlVariant, FlockKind, FlockTarget, MissionOptions, YBarRule};
use crate::dynamics::{Params, State};
use crate::error::{Error, Result};
use crate::hjb::HjbOptions;
use crate::lattice::{LatticeSpec, NodeField};

const KEYS: &[&str] = &[
    "n",
    "D",
    "alpha",
    "beta",
    "M",
    "gamma",
    "epsilon",
    "mission",
    "seed",
    "amplitude",
    "cover_index_sets",
    "x0",
    "v0",
    "initial_file",
    "target",
    "target_constant",
    "target_file",
    "dt",
    "out",
    "control_variant",
    "y_bar_rule",
    "phase1_timeout",
    "horizon_cap",
    "hold_time",
    "stride",
    "hjb_points",
    "hjb_tol",
    "hjb_max_sweeps",
    "hjb_dt",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mission {
    /// Any moving flock.
    Thm1,
    /// Prescribed moving flock shape.
    Thm2,
    /// Prescribed stationary flock shape.
    Thm3,
    /// Minimal-time value function only.
    Hjb,
}

impl Mission {
    pub fn target_kind(self) -> Option<FlockKind> {
        match self {
            Mission::Thm2 => Some(FlockKind::Moving),
            Mission::Thm3 => Some(FlockKind::Stationary),
            Mission::Thm1 | Mission::Hjb => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Random { amplitude: f64, cover_index_sets: bool },
    Explicit { x: NodeField, v: NodeField },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// A·sin(2π j₁/D) with A set so max |Δφ̄| is half of M.
    Sinusoid,
    Constant(f64),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Every key as written, for the summary.
    pub entries: BTreeMap<String, String>,
    pub spec: LatticeSpec,
    pub params: Params,
    pub epsilon: f64,
    pub mission: Mission,
    pub seed: u64,
    pub initial: InitialSpec,
    pub target: TargetSpec,
    pub out: PathBuf,
    pub options: MissionOptions,
    pub hjb_points: usize,
    pub hjb: HjbOptions,
}

struct Entry {
    line: usize,
    value: String,
}

struct Entries {
    map: BTreeMap<String, Entry>,
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Config {
                line: e.line,
                msg: format!("cannot parse {key} = {:?}", e.value),
            }),
        }
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config {
            line: 0,
            msg: format!("missing required key {key}"),
        })
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|e| e.value.as_str())
    }

    fn fail(&self, key: &str, msg: String) -> Error {
        Error::Config {
            line: self.map.get(key).map_or(0, |e| e.line),
            msg,
        }
    }

    fn choice<T>(&self, key: &str, default: T, options: &[(&str, T)]) -> Result<T>
    where
        T: Copy,
    {
        let Some(raw) = self.text(key) else {
            return Ok(default);
        };
        options
            .iter()
            .find(|(name, _)| *name == raw)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.fail(key, format!("{key} must be one of {}, got {raw:?}", names.join(", ")))
            })
    }

    fn list(&self, key: &str) -> Result<Option<NodeField>> {
        self.text(key)
            .map(|raw| NodeField::parse(raw).map_err(|e| self.fail(key, format!("{key}: {e}"))))
            .transpose()
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key = value, found {content:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Config {
                line,
                msg: format!("unknown key {key:?}"),
            });
        }
        if let Some(prev) = map.get(key) {
            let Entry { line: first, .. } = prev;
            return Err(Error::Config {
                line,
                msg: format!("duplicate key {key:?} (first set on line {first})"),
            });
        }
        map.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }
    Ok(Entries { map })
}

/// Reads and validates a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Parses config text; `base` anchors relative file paths.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let e = tokenize(text)?;
    let n: usize = e.required("n")?;
    let d: usize = e.required("D")?;
    let spec = LatticeSpec::new(n, d)?;
    let alpha: f64 = e.required("alpha")?;
    let beta: f64 = e.required("beta")?;
    let m: f64 = e.required("M")?;
    let params = match e.get::<f64>("gamma")? {
        Some(g) => Params::with_gamma(alpha, beta, m, g)?,
        None => Params::new(alpha, beta, m)?,
    };
    let eps_max = epsilon_bound(&spec, &params);
    let epsilon = e.get::<f64>("epsilon")?.unwrap_or(0.5 * eps_max);
    if !(epsilon > 0.0 && epsilon < eps_max) {
        return Err(e.fail(
            "epsilon",
            format!(
                "epsilon = {epsilon} must satisfy 0 < epsilon < min{{1, M/(2n + 1 + 8n/h^2 + 2 alpha + 8 beta)}} = {eps_max}"
            ),
        ));
    }

    let mission = e.choice(
        "mission",
        Mission::Thm1,
        &[
            ("thm1", Mission::Thm1),
            ("thm2", Mission::Thm2),
            ("thm3", Mission::Thm3),
            ("hjb", Mission::Hjb),
        ],
    )?;

    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let existing = |key: &str| -> Result<Option<PathBuf>> {
        let Some(raw) = e.text(key) else {
            return Ok(None);
        };
        let p = resolve(raw);
        if !p.is_file() {
            return Err(e.fail(key, format!("{key}: no such file {}", p.display())));
        }
        Ok(Some(p))
    };

    let seed = e.get::<u64>("seed")?.unwrap_or(0);
    let initial = match (e.list("x0")?, e.list("v0")?, existing("initial_file")?) {
        (Some(x), Some(v), None) => {
            for (key, f) in [("x0", &x), ("v0", &v)] {
                spec.check(f)
                    .map_err(|err| e.fail(key, format!("{key}: {err}")))?;
            }
            InitialSpec::Explicit { x, v }
        }
        (None, None, Some(p)) => InitialSpec::File(p),
        (None, None, None) => {
            let amplitude = e.get::<f64>("amplitude")?.unwrap_or(1.0);
            if !(amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(e.fail("amplitude", format!("amplitude = {amplitude} must be non-negative")));
            }
            InitialSpec::Random {
                amplitude,
                cover_index_sets: e.get::<bool>("cover_index_sets")?.unwrap_or(false),
            }
        }
        _ => {
            return Err(Error::Config {
                line: 0,
                msg: "give either both x0 and v0, or initial_file, or neither".into(),
            })
        }
    };

    let target = match e.text("target").unwrap_or("sinusoid") {
        "sinusoid" => TargetSpec::Sinusoid,
        "constant" => TargetSpec::Constant(e.get::<f64>("target_constant")?.unwrap_or(0.0)),
        "file" => TargetSpec::File(
            existing("target_file")?.ok_or_else(|| e.fail("target", "target = file needs target_file".into()))?,
        ),
        other => {
            return Err(e.fail(
                "target",
                format!("target must be one of sinusoid, constant, file, got {other:?}"),
            ))
        }
    };

    let mut options = MissionOptions {
        epsilon: Some(epsilon),
        variant: e.choice(
            "control_variant",
            ControlVariant::Standard,
            &[("standard", ControlVariant::Standard), ("simple", ControlVariant::Simple)],
        )?,
        y_bar_rule: e.choice(
            "y_bar_rule",
            YBarRule::Mean,
            &[("mean", YBarRule::Mean), ("minimax", YBarRule::Minimax)],
        )?,
        ..MissionOptions::default()
    };
    if let Some(dt) = e.get::<f64>("dt")? {
        options.dt = dt;
    }
    if let Some(t) = e.get::<f64>("phase1_timeout")? {
        options.phase1_timeout = t;
    }
    if let Some(cap) = e.get::<f64>("horizon_cap")? {
        options.horizon.cap = cap;
    }
    if let Some(h) = e.get::<f64>("hold_time")? {
        options.hold_time = h;
    }
    if let Some(s) = e.get::<usize>("stride")? {
        options.record_stride = s;
    }
    for (key, value, ok) in [
        ("dt", options.dt, options.dt > 0.0),
        ("phase1_timeout", options.phase1_timeout, options.phase1_timeout > 0.0),
        ("horizon_cap", options.horizon.cap, options.horizon.cap > options.horizon.floor),
        ("hold_time", options.hold_time, options.hold_time >= 0.0),
        ("stride", options.record_stride as f64, options.record_stride >= 1),
    ] {
        if !ok {
            return Err(e.fail(key, format!("{key} = {value} is out of range")));
        }
    }

    let mut hjb = HjbOptions::default();
    if let Some(t) = e.get::<f64>("hjb_tol")? {
        hjb.tol = t;
    }
    if let Some(s) = e.get::<usize>("hjb_max_sweeps")? {
        hjb.max_sweeps = s;
    }
    hjb.dt_dp = e.get::<f64>("hjb_dt")?;
    let hjb_points = e.get::<usize>("hjb_points")?.unwrap_or(101);

    let config = RunConfig {
        entries: e.map.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect(),
        spec,
        params,
        epsilon,
        mission,
        seed,
        initial,
        target,
        out: PathBuf::from(e.text("out").unwrap_or("out")),
        options,
        hjb_points,
        hjb,
    };
    // Surface target incompatibility before anything runs.
    config.flock_target()?;
    Ok(config)
}

/// Sinusoid along the first axis, A·sin(2π j₁/D), scaled so max |Δφ̄| = M/2.
/// Falls back to the cosine when the sine vanishes on the grid (D ≤ 2), and
/// to zero on a single node.
pub fn sinusoid_target(spec: &LatticeSpec, m: f64) -> Result<NodeField> {
    let d = spec.side() as f64;
    let shape = |wave: fn(f64) -> f64| -> NodeField {
        (0..spec.len())
            .map(|l| wave(2.0 * std::f64::consts::PI * spec.coords(l)[0] as f64 / d))
            .collect::<Vec<_>>()
            .into()
    };
    for wave in [f64::sin, f64::cos] {
        let unit = shape(wave);
        let (_, peak) = spec.max_abs_laplacian(&unit)?;
        if peak > 1e-9 {
            let a = 0.5 * m / peak;
            return Ok(unit.iter().map(|p| a * p).collect::<Vec<_>>().into());
        }
    }
    Ok(NodeField::zeros(spec.len()))
}

impl RunConfig {
    /// The target shape, if the mission has one.
    pub fn flock_target(&self) -> Result<Option<FlockTarget>> {
        let Some(kind) = self.mission.target_kind() else {
            return Ok(None);
        };
        let phi = match &self.target {
            TargetSpec::Sinusoid => sinusoid_target(&self.spec, self.params.m)?,
            TargetSpec::Constant(c) => NodeField::constant(self.spec.len(), *c),
            TargetSpec::File(p) => {
                let f = NodeField::parse(&std::fs::read_to_string(p)?)?;
                self.spec.check(&f)?;
                f
            }
        };
        FlockTarget::new(&self.spec, &self.params, kind, phi).map(Some)
    }

    /// Initial state at t = 0.
    pub fn initial_state(&self) -> Result<State> {
        let n = self.spec.len();
        let state = match &self.initial {
            InitialSpec::Explicit { x, v } => State::new(0.0, x.clone(), v.clone()),
            InitialSpec::File(p) => {
                let text = std::fs::read_to_string(p)?;
                let mut lines = text.lines().filter(|l| !l.trim().is_empty());
                let mut next = |what: &str| {
                    lines
                        .next()
                        .ok_or_else(|| Error::Invalid(format!("{}: missing {what} line", p.display())))
                        .and_then(NodeField::parse)
                };
                let x = next("position")?;
                let v = next("velocity")?;
                State::new(0.0, x, v)
            }
            InitialSpec::Random {
                amplitude,
                cover_index_sets,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let a = *amplitude;
                let draw = |rng: &mut ChaCha8Rng| if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 };
                let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
                let v: Vec<f64> = if *cover_index_sets {
                    let p = &self.params;
                    let bands = [(0.0, p.a1), (p.a1, p.a2), (p.a2, 2.5 * p.a2)];
                    (0..n)
                        .map(|l| {
                            let (lo, hi) = bands[l % 3];
                            let speed = rng.gen_range(lo..hi);
                            if rng.gen::<bool>() {
                                speed
                            } else {
                                -speed
                            }
                        })
                        .collect()
                } else {
                    (0..n).map(|_| draw(&mut rng)).collect()
                };
                State::new(0.0, x, v)
            }
        };
        state.check(&self.spec)?;
        Ok(state)
    }
}
