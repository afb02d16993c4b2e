//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [subsystem.1]
//! levels = 3
//! freq_ghz = 4.41666
//! selfkerr_mhz = 230.56
//! t1_us = 80
//! t2_us = 26
//!
//! [crosskerr]
//! 1-2 = 1.176
//!
//! [control.1]
//! num_splines = 20
//! carrier_freqs_mhz = 0, -230.56
//! lab_amp_bound_mhz = 5.729578
//! ```
//!
//! Subsystems are numbered from 1. Comments start with `#` or `;`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::optimize::OptimizerOptions;
use crate::system::SubsystemSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlConfig {
    pub num_splines: usize,
    pub carrier_freqs_mhz: Vec<f64>,
    pub lab_amp_bound_mhz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    FullEnsemble,
    /// Ensemble over the listed subsystems (0-based), the rest in the ground state.
    PartialEnsemble(Vec<usize>),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetIndex {
    Composite(usize),
    /// One level per subsystem.
    Levels(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetConfig {
    pub index: TargetIndex,
    pub unitary_file: Option<PathBuf>,
    pub initial_state: InitialState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub penalty_width_us: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub options: OptimizerOptions,
    pub seed: u64,
    /// Initial coefficients are drawn from this fraction of each box.
    pub init_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub subsystems: Vec<SubsystemSpec>,
    /// `(p, q, ξ_pq / 2π in MHz)` with 0-based subsystem indices.
    pub crosskerr: Vec<(usize, usize, f64)>,
    pub controls: Vec<ControlConfig>,
    pub final_time_us: f64,
    pub steps: usize,
    pub target: TargetConfig,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub output: OutputConfig,
    /// Relative file paths are resolved against this directory.
    pub base_dir: PathBuf,
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Config {
            section: self.name.clone(),
            line,
            message: message.into(),
        }
    }

    fn take_raw(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| self.err(e.line, format!("malformed value for `{key}`: `{}`", e.value))),
        }
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.opt(key)?.ok_or_else(|| self.err(self.line, format!("missing key `{key}`")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(e) = self.take_raw(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|_| self.err(e.line, format!("malformed list for `{key}`: `{}`", e.value)))
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            Some((k, e)) => Err(self.err(e.line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                section: String::new(),
                line,
                message: format!("malformed section header `{content}`"),
            })?;
            let name = name.trim().to_string();
            if sections.iter().any(|s| s.name == name) {
                return Err(Error::Config {
                    section: name,
                    line,
                    message: "duplicate section".into(),
                });
            }
            sections.push(Section {
                name,
                line,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let Some(section) = sections.last_mut() else {
            return Err(Error::Config {
                section: String::new(),
                line,
                message: "key outside of any section".into(),
            });
        };
        let Some((key, value)) = content.split_once('=') else {
            return Err(section.err(line, format!("expected `key = value`, got `{content}`")));
        };
        let key = key.trim().to_string();
        if section.entries.contains_key(&key) {
            return Err(section.err(line, format!("duplicate key `{key}`")));
        }
        section.entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    Ok(sections)
}

fn numbered(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn take_section(sections: &mut Vec<Section>, name: &str) -> Option<Section> {
    let pos = sections.iter().position(|s| s.name == name)?;
    Some(sections.remove(pos))
}

fn require_section(sections: &mut Vec<Section>, name: &str) -> Result<Section> {
    take_section(sections, name).ok_or_else(|| Error::Config {
        section: name.into(),
        line: 0,
        message: "missing section".into(),
    })
}

fn take_numbered(sections: &mut Vec<Section>, prefix: &str) -> Result<Vec<Section>> {
    let mut found: Vec<(usize, Section)> = Vec::new();
    let mut rest = Vec::new();
    for s in sections.drain(..) {
        match numbered(&s.name, prefix) {
            Some(k) => found.push((k, s)),
            None => rest.push(s),
        }
    }
    *sections = rest;
    found.sort_by_key(|(k, _)| *k);
    for (expected, (k, s)) in found.iter().enumerate() {
        if *k != expected + 1 {
            return Err(s.err(s.line, format!("sections [{prefix}N] must be numbered 1, 2, … without gaps")));
        }
    }
    Ok(found.into_iter().map(|(_, s)| s).collect())
}

fn parse_index_list(section: &Section, line: usize, raw: &str, count: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let k: usize = part
            .trim()
            .parse()
            .map_err(|_| section.err(line, format!("malformed subsystem list `{raw}`")))?;
        if k == 0 || k > count {
            return Err(section.err(line, format!("subsystem {k} does not exist (1..={count})")));
        }
        out.push(k - 1);
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut sections = parse_sections(text)?;

        let mut subsystems = Vec::new();
        for (q, mut s) in take_numbered(&mut sections, "subsystem.")?.into_iter().enumerate() {
            let mut spec = SubsystemSpec::new(s.req("levels")?, s.req("freq_ghz")?, s.req("selfkerr_mhz")?);
            spec.t1_us = s.opt("t1_us")?;
            spec.t2_us = s.opt("t2_us")?;
            spec.validate(q).map_err(|e| s.err(s.line, e.to_string()))?;
            s.finish()?;
            subsystems.push(spec);
        }
        if subsystems.is_empty() {
            return Err(Error::Config {
                section: "subsystem.1".into(),
                line: 0,
                message: "at least one subsystem is required".into(),
            });
        }
        let count = subsystems.len();

        let mut crosskerr = Vec::new();
        if let Some(mut s) = take_section(&mut sections, "crosskerr") {
            let keys: Vec<String> = s.entries.keys().cloned().collect();
            for key in keys {
                let entry = s.take_raw(&key).expect("key listed above");
                let pair = key
                    .split_once('-')
                    .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
                let Some((a, b)) = pair else {
                    return Err(s.err(entry.line, format!("expected a pair `p-q`, got `{key}`")));
                };
                if a == 0 || b == 0 || a > count || b > count || a == b {
                    return Err(s.err(entry.line, format!("pair {a}-{b} does not name two distinct subsystems of {count}")));
                }
                let mhz: f64 = entry
                    .value
                    .parse()
                    .map_err(|_| s.err(entry.line, format!("malformed value for `{key}`")))?;
                crosskerr.push((a - 1, b - 1, mhz));
            }
        }

        let control_sections = take_numbered(&mut sections, "control.")?;
        if control_sections.len() != count {
            return Err(Error::Config {
                section: "control".into(),
                line: control_sections.first().map_or(0, |s| s.line),
                message: format!("{} control sections for {count} subsystems", control_sections.len()),
            });
        }
        let mut controls = Vec::new();
        for mut s in control_sections {
            let c = ControlConfig {
                num_splines: s.req("num_splines")?,
                carrier_freqs_mhz: s
                    .list("carrier_freqs_mhz")?
                    .ok_or_else(|| s.err(s.line, "missing key `carrier_freqs_mhz`"))?,
                lab_amp_bound_mhz: s.opt("lab_amp_bound_mhz")?,
            };
            if let Some(b) = c.lab_amp_bound_mhz {
                if !(b > 0.0) {
                    return Err(s.err(s.line, "lab_amp_bound_mhz must be positive"));
                }
            }
            s.finish()?;
            controls.push(c);
        }

        let mut grid = require_section(&mut sections, "grid")?;
        let final_time_us: f64 = grid.req("final_time_us")?;
        let steps: usize = grid.req("steps")?;
        if !(final_time_us > 0.0) || steps == 0 {
            return Err(grid.err(grid.line, "final_time_us and steps must be positive"));
        }
        grid.finish()?;

        let mut t = require_section(&mut sections, "target")?;
        let index_entry = t.take_raw("index");
        let levels_entry = t.take_raw("levels");
        let index = match (index_entry, levels_entry) {
            (Some(e), None) => TargetIndex::Composite(
                e.value
                    .parse()
                    .map_err(|_| t.err(e.line, format!("malformed target index `{}`", e.value)))?,
            ),
            (None, Some(e)) => TargetIndex::Levels(
                e.value
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| t.err(e.line, format!("malformed target levels `{}`", e.value)))?,
            ),
            (Some(e), Some(_)) => return Err(t.err(e.line, "give either `index` or `levels`, not both")),
            (None, None) => return Err(t.err(t.line, "missing key `index` (or `levels`)")),
        };
        let unitary_file = t.opt::<String>("unitary_file")?.map(PathBuf::from);
        let mode_entry = t.take_raw("initial_state");
        let mut basis_entry = t.take_raw("basis_subsystems");
        let state_file = t.opt::<String>("state_file")?;
        let initial_state = match mode_entry.as_ref().map(|e| e.value.as_str()) {
            None | Some("full-ensemble") => InitialState::FullEnsemble,
            Some("partial-ensemble") => {
                let line = mode_entry.as_ref().map_or(t.line, |e| e.line);
                let e = basis_entry
                    .take()
                    .ok_or_else(|| t.err(line, "partial-ensemble needs `basis_subsystems`"))?;
                InitialState::PartialEnsemble(parse_index_list(&t, e.line, &e.value, count)?)
            }
            Some("file") => {
                let line = mode_entry.as_ref().map_or(t.line, |e| e.line);
                InitialState::File(PathBuf::from(
                    state_file.clone().ok_or_else(|| t.err(line, "initial_state = file needs `state_file`"))?,
                ))
            }
            Some(other) => {
                let line = mode_entry.as_ref().map_or(t.line, |e| e.line);
                return Err(t.err(line, format!("unknown initial_state `{other}`")));
            }
        };
        if let Some(e) = basis_entry {
            return Err(t.err(e.line, "`basis_subsystems` only applies to partial-ensemble"));
        }
        if state_file.is_some() && !matches!(initial_state, InitialState::File(_)) {
            return Err(t.err(t.line, "`state_file` only applies to initial_state = file"));
        }
        if let TargetIndex::Levels(l) = &index {
            if l.len() != count || l.iter().zip(&subsystems).any(|(k, s)| *k >= s.levels) {
                return Err(t.err(t.line, format!("target levels {l:?} do not fit the subsystems")));
            }
        }
        let dim: usize = subsystems.iter().map(|s| s.levels).product();
        if let TargetIndex::Composite(m) = index {
            if m >= dim {
                return Err(t.err(t.line, format!("target index {m} out of range for dimension {dim}")));
            }
        }
        t.finish()?;

        let mut o = require_section(&mut sections, "objective")?;
        let objective = ObjectiveConfig {
            gamma1: o.opt("gamma1")?.unwrap_or(0.0),
            gamma2: o.opt("gamma2")?.unwrap_or(0.0),
            penalty_width_us: o.opt("penalty_width_us")?.unwrap_or(0.1),
        };
        if !(objective.gamma1 >= 0.0 && objective.gamma2 >= 0.0 && objective.penalty_width_us > 0.0) {
            return Err(o.err(o.line, "gamma1, gamma2 must be nonnegative and penalty_width_us positive"));
        }
        o.finish()?;

        let defaults = OptimizerOptions::default();
        let optimizer = match take_section(&mut sections, "optimizer") {
            None => OptimizerConfig {
                options: defaults,
                seed: 0,
                init_scale: 1e-2,
            },
            Some(mut s) => {
                let cfg = OptimizerConfig {
                    options: OptimizerOptions {
                        max_iters: s.opt("max_iters")?.unwrap_or(defaults.max_iters),
                        memory: s.opt("lbfgs_memory")?.unwrap_or(defaults.memory),
                        grad_tol: s.opt("grad_tol")?.unwrap_or(defaults.grad_tol),
                        cost_tol: s.opt("cost_tol")?.unwrap_or(defaults.cost_tol),
                        armijo_c1: s.opt("armijo_c1")?.unwrap_or(defaults.armijo_c1),
                        backtrack: s.opt("backtrack")?.unwrap_or(defaults.backtrack),
                        max_trials: s.opt("max_trials")?.unwrap_or(defaults.max_trials),
                    },
                    seed: s.opt("seed")?.unwrap_or(0),
                    init_scale: s.opt("init_scale")?.unwrap_or(1e-2),
                };
                cfg.options.validate().map_err(|e| s.err(s.line, e.to_string()))?;
                if !(cfg.init_scale >= 0.0) {
                    return Err(s.err(s.line, "init_scale must be nonnegative"));
                }
                s.finish()?;
                cfg
            }
        };

        let output = match take_section(&mut sections, "output") {
            None => OutputConfig {
                directory: PathBuf::from("out"),
                stride: 1,
            },
            Some(mut s) => {
                let cfg = OutputConfig {
                    directory: PathBuf::from(s.opt::<String>("directory")?.unwrap_or_else(|| "out".into())),
                    stride: s.opt("stride")?.unwrap_or(1),
                };
                if cfg.stride == 0 {
                    return Err(s.err(s.line, "stride must be at least 1"));
                }
                s.finish()?;
                cfg
            }
        };

        if let Some(s) = sections.first() {
            return Err(s.err(s.line, format!("unknown section [{}]", s.name)));
        }

        Ok(RunConfig {
            subsystems,
            crosskerr,
            controls,
            final_time_us,
            steps,
            target: TargetConfig {
                index,
                unitary_file,
                initial_state,
            },
            objective,
            optimizer,
            output,
            base_dir: base_dir.into(),
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Serializes back to the text format; parsing the result gives an
    /// identical configuration.
    pub fn to_text(&self) -> String {
        fn list<T: std::fmt::Display>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
        }
        let mut out = String::new();
        for (q, s) in self.subsystems.iter().enumerate() {
            let _ = writeln!(out, "[subsystem.{}]", q + 1);
            let _ = writeln!(out, "levels = {}", s.levels);
            let _ = writeln!(out, "freq_ghz = {}", s.freq_ghz);
            let _ = writeln!(out, "selfkerr_mhz = {}", s.selfkerr_mhz);
            if let Some(t1) = s.t1_us {
                let _ = writeln!(out, "t1_us = {t1}");
            }
            if let Some(t2) = s.t2_us {
                let _ = writeln!(out, "t2_us = {t2}");
            }
            out.push('\n');
        }
        if !self.crosskerr.is_empty() {
            out.push_str("[crosskerr]\n");
            for (p, q, v) in &self.crosskerr {
                let _ = writeln!(out, "{}-{} = {v}", p + 1, q + 1);
            }
            out.push('\n');
        }
        for (q, c) in self.controls.iter().enumerate() {
            let _ = writeln!(out, "[control.{}]", q + 1);
            let _ = writeln!(out, "num_splines = {}", c.num_splines);
            let _ = writeln!(out, "carrier_freqs_mhz = {}", list(&c.carrier_freqs_mhz));
            if let Some(b) = c.lab_amp_bound_mhz {
                let _ = writeln!(out, "lab_amp_bound_mhz = {b}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "[grid]\nfinal_time_us = {}\nsteps = {}\n", self.final_time_us, self.steps);
        out.push_str("[target]\n");
        match &self.target.index {
            TargetIndex::Composite(m) => {
                let _ = writeln!(out, "index = {m}");
            }
            TargetIndex::Levels(l) => {
                let _ = writeln!(out, "levels = {}", list(l));
            }
        }
        if let Some(u) = &self.target.unitary_file {
            let _ = writeln!(out, "unitary_file = {}", u.display());
        }
        match &self.target.initial_state {
            InitialState::FullEnsemble => out.push_str("initial_state = full-ensemble\n"),
            InitialState::PartialEnsemble(b) => {
                let one_based: Vec<usize> = b.iter().map(|q| q + 1).collect();
                let _ = writeln!(out, "initial_state = partial-ensemble\nbasis_subsystems = {}", list(&one_based));
            }
            InitialState::File(p) => {
                let _ = writeln!(out, "initial_state = file\nstate_file = {}", p.display());
            }
        }
        let o = &self.objective;
        let _ = writeln!(
            out,
            "\n[objective]\ngamma1 = {}\ngamma2 = {}\npenalty_width_us = {}\n",
            o.gamma1, o.gamma2, o.penalty_width_us
        );
        let p = &self.optimizer.options;
        let _ = writeln!(
            out,
            "[optimizer]\nmax_iters = {}\nlbfgs_memory = {}\ngrad_tol = {}\ncost_tol = {}\narmijo_c1 = {}\nbacktrack = {}\nmax_trials = {}\nseed = {}\ninit_scale = {}\n",
            p.max_iters, p.memory, p.grad_tol, p.cost_tol, p.armijo_c1, p.backtrack, p.max_trials, self.optimizer.seed, self.optimizer.init_scale
        );
        let _ = writeln!(out, "[output]\ndirectory = {}\nstride = {}", self.output.directory.display(), self.output.stride);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUDIT_CAVITY: &str = "
[subsystem.1]
levels = 3
freq_ghz = 4.41666
selfkerr_mhz = 230.56
t1_us = 80
t2_us = 26

[subsystem.2]
levels = 20
freq_ghz = 6.84081
selfkerr_mhz = 0
t1_us = 0.3892

[crosskerr]
1-2 = 1.176

[control.1]
num_splines = 75
carrier_freqs_mhz = 0, -230.56
lab_amp_bound_mhz = 5.729577951308232

[control.2]
num_splines = 75
carrier_freqs_mhz = 0

[grid]
final_time_us = 2.5
steps = 25000

[target]
index = 0
initial_state = partial-ensemble
basis_subsystems = 1

[objective]
gamma1 = 1e-6
gamma2 = 1e-2
penalty_width_us = 0.1
";

    #[test]
    fn parses_qudit_cavity_config() {
        let cfg = RunConfig::parse(QUDIT_CAVITY, ".").unwrap();
        assert_eq!(cfg.subsystems.len(), 2);
        assert_eq!(cfg.subsystems.iter().map(|s| s.levels).product::<usize>(), 60);
        assert_eq!(cfg.subsystems[1].t2_us, None);
        assert_eq!(cfg.crosskerr, vec![(0, 1, 1.176)]);
        assert_eq!(cfg.controls[0].carrier_freqs_mhz, vec![0.0, -230.56]);
        assert_eq!(cfg.target.initial_state, InitialState::PartialEnsemble(vec![0]));
        assert_eq!(cfg.optimizer.options, OptimizerOptions::default());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::parse(QUDIT_CAVITY, ".").unwrap();
        let again = RunConfig::parse(&cfg.to_text(), ".").unwrap();
        assert_eq!(cfg, again);
    }

    fn expect_config_error(text: &str, section: &str, needle: &str) {
        match RunConfig::parse(text, ".") {
            Err(Error::Config { section: s, message, .. }) => {
                assert_eq!(s, section, "{message}");
                assert!(message.contains(needle), "`{message}` lacks `{needle}`");
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_crosskerr_pair() {
        let text = QUDIT_CAVITY.replace("1-2 = 1.176", "1-3 = 1.176");
        expect_config_error(&text, "crosskerr", "1-3");
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        expect_config_error(&QUDIT_CAVITY.replace("t2_us = 26", "t3_us = 26"), "subsystem.1", "unknown key `t3_us`");
        expect_config_error(&QUDIT_CAVITY.replace("levels = 20\n", ""), "subsystem.2", "missing key `levels`");
        expect_config_error(&QUDIT_CAVITY.replace("steps = 25000", "steps = many"), "grid", "malformed");
        expect_config_error(&format!("{QUDIT_CAVITY}\n[extra]\nx = 1\n"), "extra", "unknown section");
    }

    #[test]
    fn error_carries_line_number() {
        let text = QUDIT_CAVITY.replace("selfkerr_mhz = 230.56", "selfkerr_mhz = abc");
        let Err(Error::Config { line, .. }) = RunConfig::parse(&text, ".") else {
            panic!("expected a config error")
        };
        assert_eq!(text.lines().nth(line - 1).unwrap().trim(), "selfkerr_mhz = abc");
    }

    #[test]
    fn control_count_must_match() {
        let text = QUDIT_CAVITY.replace("[control.2]\nnum_splines = 75\ncarrier_freqs_mhz = 0\n", "");
        assert!(matches!(RunConfig::parse(&text, "."), Err(Error::Config { .. })));
    }
}
