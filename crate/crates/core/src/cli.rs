//! Command-line front end.
//!
//! Settings resolve in three layers: built-in defaults for the command, then
//! an optional TOML file (`--config`), then flags. The resolved settings are
//! written back into every output bundle's manifest, both as a config table
//! and as an equivalent command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dynamics::{run_simulation, RunConfig, UpdateRule};
use crate::error::{Error, Result};
use crate::experiments::{linspace_inclusive, sweep_temptation, sweep_tl, Execution, PlaneResult, SweepSpec};
use crate::interaction::{GameParams, ParamMode};
use crate::io::{self, Manifest};
use crate::metrics::SamplingMode;
use crate::model::{InitScheme, LatticeConfig};
use crate::oracle;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pdpa", version, about = "Spatial prisoner's dilemma with probabilistic abstention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its time series.
    Run(RunArgs),
    /// Sweep the temptation T at a fixed loner's payoff.
    #[command(name = "sweep-t")]
    SweepT(SweepArgs),
    /// Sweep the full T-L plane.
    #[command(name = "sweep-tl")]
    SweepTl(SweepArgs),
    /// Run one simulation and write lattice snapshots.
    Snapshot(RunArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML file with default settings; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Lattice size, `N` or `WxH` [default: 102x102].
    #[arg(long)]
    pub size: Option<String>,
    /// Monte Carlo steps per run [default: 100000].
    #[arg(long)]
    pub steps: Option<u64>,
    /// Update rule(s): sync, async; sweeps accept a comma list [default: sync; sweeps: sync,async].
    #[arg(long)]
    pub rule: Option<String>,
    /// Initial α scheme(s): pd, opd, pdpa, custom:<w0,..,w8> [default: pdpa; sweep-t: pd,opd,pdpa; sweep-tl: opd,pdpa].
    #[arg(long)]
    pub scheme: Option<String>,
    /// Temptation; sweeps accept a comma list or start:stop:step [default: 1.4; sweep-t: 1.1,1.4,1.9; sweep-tl: 1:2:0.05].
    #[arg(long = "T", value_name = "T")]
    pub temptation: Option<String>,
    /// Loner's payoff; sweep-tl accepts a list or range [default: 0.4; sweep-tl: 0:1:0.05].
    #[arg(long = "L", value_name = "L")]
    pub loner: Option<String>,
    /// Fermi noise amplitude [default: 0.1].
    #[arg(long = "K", value_name = "K")]
    pub noise: Option<f64>,
    /// Seed (master seed for sweeps) [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: pdpa-out].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Require 1 < T < 2 and 0 < L < 1 (default except for sweep-tl).
    #[arg(long, conflicts_with = "sweep_mode")]
    pub strict: bool,
    /// Allow the closed ranges 1 <= T <= 2, 0 <= L <= 1 (default for sweep-tl).
    #[arg(long)]
    pub sweep_mode: bool,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Recorded steps: dense-early, every-k:<k>, all [default: dense-early].
    #[arg(long)]
    pub sampling: Option<String>,
    /// Comma list of steps to snapshot [default: none; snapshot: final step].
    #[arg(long, value_name = "STEPS")]
    pub snapshot_steps: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Independent runs per cell [default: 100].
    #[arg(long)]
    pub replicates: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Seed for the sampled checks.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// A scalar, an array, or a textual list/range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueList {
    One(f64),
    Many(Vec<f64>),
    Text(String),
}

impl ValueList {
    fn resolve(&self, key: &str) -> Result<Vec<f64>> {
        match self {
            ValueList::One(v) => Ok(vec![*v]),
            ValueList::Many(v) => Ok(v.clone()),
            ValueList::Text(s) => parse_values(key, s),
        }
    }
}

/// `a,b,c` or `start:stop:step` (inclusive).
pub fn parse_values(key: &str, text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::param(key, format!("`{s}` is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(Error::param(key, format!("bad range `{text}`")));
            }
            Ok(linspace_inclusive(start, stop, step))
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(Error::param(key, format!("bad value list `{text}`"))),
    }
}

/// Settings as they appear in a config file. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub temptation: Option<ValueList>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub loner: Option<ValueList>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ParamMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_steps: Option<Vec<u64>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommandKind {
    Run,
    SweepT,
    SweepTl,
    Snapshot,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Run => "run",
            CommandKind::SweepT => "sweep-t",
            CommandKind::SweepTl => "sweep-tl",
            CommandKind::Snapshot => "snapshot",
        }
    }

    fn is_sweep(self) -> bool {
        matches!(self, CommandKind::SweepT | CommandKind::SweepTl)
    }
}

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub command: CommandKind,
    pub lattice: LatticeConfig,
    pub steps: u64,
    pub rules: Vec<UpdateRule>,
    pub schemes: Vec<InitScheme>,
    pub t_values: Vec<f64>,
    pub l_values: Vec<f64>,
    pub noise: f64,
    pub replicates: u32,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub mode: ParamMode,
    pub snapshot_steps: Vec<u64>,
}

fn parse_size(text: &str) -> Result<LatticeConfig> {
    let bad = || Error::param("size", format!("`{text}` (expected N or WxH)"));
    let (w, h) = match text.split_once(['x', 'X']) {
        Some((w, h)) => (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?),
        None => {
            let n = text.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    LatticeConfig::new(w, h).map_err(|e| Error::param("size", e.to_string()))
}

fn parse_list<T>(key: &str, text: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items = text.split(',').map(|s| item(s.trim())).collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::param(key, "empty list"));
    }
    Ok(items)
}

/// Splits a scheme list on commas that start a new scheme name, so custom
/// weight lists stay intact.
fn parse_schemes(text: &str) -> Result<Vec<InitScheme>> {
    let mut out: Vec<String> = Vec::new();
    for part in text.split(',') {
        let p = part.trim();
        let starts_scheme = p.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
        match out.last_mut() {
            Some(last) if !starts_scheme && last.starts_with("custom:") => {
                last.push(',');
                last.push_str(p);
            }
            _ => out.push(p.to_string()),
        }
    }
    out.iter().map(|s| s.parse()).collect()
}

impl Settings {
    pub fn defaults(command: CommandKind) -> Self {
        let mut s = Settings {
            command,
            lattice: LatticeConfig::default(),
            steps: 100_000,
            rules: vec![UpdateRule::Synchronous],
            schemes: vec![InitScheme::Pdpa],
            t_values: vec![1.4],
            l_values: vec![0.4],
            noise: 0.1,
            replicates: 100,
            seed: 1,
            sampling: SamplingMode::DenseEarly,
            mode: ParamMode::Strict,
            snapshot_steps: Vec::new(),
        };
        match command {
            CommandKind::SweepT => {
                let spec = SweepSpec::default_temptation(RunConfig::default());
                s.rules = spec.rules;
                s.schemes = spec.schemes;
                s.t_values = spec.t_values;
            }
            CommandKind::SweepTl => {
                let spec = SweepSpec::default_plane(RunConfig::default());
                s.rules = spec.rules;
                s.schemes = spec.schemes;
                s.t_values = spec.t_values;
                s.l_values = spec.l_values;
                s.mode = ParamMode::Sweep;
            }
            CommandKind::Snapshot => s.snapshot_steps = vec![s.steps],
            CommandKind::Run => {}
        }
        s
    }

    /// Applies every key present in `file` on top of `self`.
    pub fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        if let Some(size) = &file.size {
            self.lattice = parse_size(size)?;
        }
        if let Some(steps) = file.steps {
            let was_final = self.command == CommandKind::Snapshot && self.snapshot_steps == [self.steps];
            self.steps = steps;
            if was_final {
                self.snapshot_steps = vec![steps];
            }
        }
        if let Some(rule) = &file.rule {
            self.rules = parse_list("rule", rule, |s| s.parse())?;
        }
        if let Some(scheme) = &file.scheme {
            self.schemes = parse_schemes(scheme)?;
        }
        if let Some(t) = &file.temptation {
            self.t_values = t.resolve("T")?;
        }
        if let Some(l) = &file.loner {
            self.l_values = l.resolve("L")?;
        }
        if let Some(k) = file.noise {
            self.noise = k;
        }
        if let Some(r) = file.replicates {
            self.replicates = r;
        }
        if let Some(seed) = file.seed {
            self.seed = seed;
        }
        if let Some(sampling) = &file.sampling {
            self.sampling = sampling.parse()?;
        }
        if let Some(mode) = file.mode {
            self.mode = mode;
        }
        if let Some(steps) = &file.snapshot_steps {
            self.snapshot_steps = steps.clone();
        }
        Ok(())
    }

    /// Everything as an explicit config file.
    pub fn to_config_file(&self) -> ConfigFile {
        let join = |v: &[String]| v.join(",");
        let values = |v: &[f64]| {
            if v.len() == 1 {
                ValueList::One(v[0])
            } else {
                ValueList::Many(v.to_vec())
            }
        };
        let sweep = self.command.is_sweep();
        ConfigFile {
            size: Some(format!("{}x{}", self.lattice.width, self.lattice.height)),
            steps: Some(self.steps),
            rule: Some(join(&self.rules.iter().map(|r| r.to_string()).collect::<Vec<_>>())),
            scheme: Some(join(&self.schemes.iter().map(|s| s.to_string()).collect::<Vec<_>>())),
            temptation: Some(values(&self.t_values)),
            loner: Some(values(&self.l_values)),
            noise: Some(self.noise),
            replicates: sweep.then_some(self.replicates),
            seed: Some(self.seed),
            sampling: (!sweep).then(|| self.sampling.to_string()),
            mode: Some(self.mode),
            snapshot_steps: (!sweep).then(|| self.snapshot_steps.clone()),
        }
    }

    /// Equivalent command line, without `--out`.
    pub fn to_args(&self) -> Vec<String> {
        let file = self.to_config_file();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut args = vec![
            self.command.name().to_string(),
            "--size".into(),
            file.size.unwrap(),
            "--steps".into(),
            self.steps.to_string(),
            "--rule".into(),
            file.rule.unwrap(),
            "--scheme".into(),
            file.scheme.unwrap(),
            "--T".into(),
            list(&self.t_values),
            "--L".into(),
            list(&self.l_values),
            "--K".into(),
            self.noise.to_string(),
            "--seed".into(),
            self.seed.to_string(),
            match self.mode {
                ParamMode::Strict => "--strict".into(),
                ParamMode::Sweep => "--sweep-mode".into(),
            },
        ];
        if self.command.is_sweep() {
            args.extend(["--replicates".into(), self.replicates.to_string()]);
        } else {
            args.extend(["--sampling".into(), self.sampling.to_string()]);
            let steps: Vec<String> = self.snapshot_steps.iter().map(|s| s.to_string()).collect();
            if !steps.is_empty() {
                args.extend(["--snapshot-steps".into(), steps.join(",")]);
            }
        }
        args
    }

    fn single<T: Clone>(&self, key: &str, values: &[T]) -> Result<T> {
        match values {
            [v] => Ok(v.clone()),
            _ => Err(Error::param(key, format!("`{}` takes a single value", self.command.name()))),
        }
    }

    /// The run configuration for `run` and `snapshot`.
    pub fn run_config(&self) -> Result<RunConfig> {
        let config = RunConfig {
            lattice: self.lattice,
            params: GameParams {
                temptation: self.single("T", &self.t_values)?,
                loner: self.single("L", &self.l_values)?,
                noise: self.noise,
            },
            mode: self.mode,
            scheme: self.single("scheme", &self.schemes)?,
            rule: self.single("rule", &self.rules)?,
            steps: self.steps,
            sampling: self.sampling,
            snapshot_steps: self.snapshot_steps.clone(),
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        if self.command == CommandKind::SweepT && self.l_values.len() != 1 {
            return Err(Error::param("L", "sweep-t takes a single L; use sweep-tl for a plane"));
        }
        let spec = SweepSpec {
            base: RunConfig {
                lattice: self.lattice,
                params: GameParams {
                    temptation: self.t_values[0],
                    loner: self.l_values[0],
                    noise: self.noise,
                },
                mode: self.mode,
                scheme: self.schemes[0].clone(),
                rule: self.rules[0],
                steps: self.steps,
                sampling: SamplingMode::EveryK(self.steps.max(1)),
                snapshot_steps: Vec::new(),
                seed: self.seed,
            },
            t_values: self.t_values.clone(),
            l_values: self.l_values.clone(),
            schemes: self.schemes.clone(),
            rules: self.rules.clone(),
            replicates: self.replicates,
            master_seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn flags_as_file(common: &CommonArgs, sampling: Option<&String>, snapshots: Option<&String>, replicates: Option<u32>) -> Result<ConfigFile> {
    let snapshot_steps = snapshots
        .map(|s| parse_list("snapshot-steps", s, |v| v.parse::<u64>().map_err(|_| Error::param("snapshot-steps", format!("`{v}` is not a step")))))
        .transpose()?;
    Ok(ConfigFile {
        size: common.size.clone(),
        steps: common.steps,
        rule: common.rule.clone(),
        scheme: common.scheme.clone(),
        temptation: common.temptation.clone().map(ValueList::Text),
        loner: common.loner.clone().map(ValueList::Text),
        noise: common.noise,
        replicates,
        seed: common.seed,
        sampling: sampling.cloned(),
        mode: if common.strict {
            Some(ParamMode::Strict)
        } else if common.sweep_mode {
            Some(ParamMode::Sweep)
        } else {
            None
        },
        snapshot_steps,
    })
}

/// Resolves defaults, the config file and flags into [`Settings`].
pub fn parse_config(command: CommandKind, common: &CommonArgs, sampling: Option<&String>, snapshots: Option<&String>, replicates: Option<u32>) -> Result<Settings> {
    let mut settings = Settings::defaults(command);
    if let Some(path) = &common.config {
        let file = ConfigFile::load(path)?;
        if command.is_sweep() && (file.sampling.is_some() || file.snapshot_steps.is_some()) {
            return Err(Error::InvalidConfig("sampling and snapshot-steps do not apply to sweeps".into()));
        }
        if !command.is_sweep() && file.replicates.is_some() {
            return Err(Error::InvalidConfig("replicates only applies to sweeps".into()));
        }
        settings.apply(&file)?;
    }
    settings.apply(&flags_as_file(common, sampling, snapshots, replicates)?)?;
    Ok(settings)
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("pdpa-out"))
}

fn manifest(settings: &Settings) -> Manifest {
    Manifest {
        tool: "pdpa".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: settings.command.name().into(),
        args: settings.to_args(),
        config: serde_json::to_value(settings.to_config_file()).expect("config serializes"),
        seed: settings.seed,
        files: Vec::new(),
    }
}

fn snapshot_stem(step: u64) -> String {
    format!("snapshot_step{step}")
}

/// Executes `run` or `snapshot`, returning the bundle's file names.
pub fn execute_run(settings: &Settings, out: &Path) -> Result<Vec<String>> {
    let config = settings.run_config()?;
    let result = run_simulation(&config)?;
    let mut files = Vec::new();
    if settings.command == CommandKind::Run {
        io::write_timeseries(&result.series, &out.join("timeseries.csv"))?;
        files.push("timeseries.csv".to_string());
    }
    for snap in &result.snapshots {
        let stem = snapshot_stem(snap.step);
        io::write_snapshot(snap, &out.join(&stem))?;
        files.extend([".epsilon.csv", ".alpha.csv", ".strategy.csv"].map(|s| format!("{stem}{s}")));
    }
    manifest(settings).write(out, &files)?;
    Ok(files)
}

fn plane_file(plane: &PlaneResult) -> String {
    format!("heatmap_{}_{}.csv", plane.scheme.name(), plane.rule)
}

/// Executes `sweep-t` or `sweep-tl`, returning the bundle's file names.
pub fn execute_sweep(settings: &Settings, out: &Path, exec: Execution) -> Result<Vec<String>> {
    let spec = settings.sweep_spec()?;
    if settings.schemes.iter().filter(|s| matches!(s, InitScheme::Custom(_))).count() > 1 {
        return Err(Error::param("scheme", "at most one custom scheme per sweep"));
    }
    let mut files = Vec::new();
    let planes = if settings.command == CommandKind::SweepT {
        let rows = sweep_temptation(&spec, exec)?;
        io::write_sweep_table(&rows, &out.join("sweep_t.csv"))?;
        files.push("sweep_t.csv".to_string());
        // regroup rows into planes for the raw replicate file
        rows.chunks(spec.t_values.len())
            .map(|chunk| PlaneResult {
                scheme: chunk[0].scheme.clone(),
                rule: chunk[0].rule,
                t_values: spec.t_values.clone(),
                l_values: spec.l_values.clone(),
                cells: chunk.iter().map(|r| r.cell.clone()).collect(),
            })
            .collect::<Vec<_>>()
    } else {
        let planes = sweep_tl(&spec, exec)?;
        for plane in &planes {
            let name = plane_file(plane);
            io::write_heatmap(plane, &out.join(&name))?;
            files.push(name);
        }
        planes
    };
    io::write_replicates(&planes, &out.join("replicates.csv"))?;
    files.push("replicates.csv".to_string());
    manifest(settings).write(out, &files)?;
    Ok(files)
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let exec = Execution {
        workers: None,
        progress: true,
    };
    let outcome = match &cli.command {
        Command::Run(a) | Command::Snapshot(a) => {
            let kind = if matches!(cli.command, Command::Run(_)) { CommandKind::Run } else { CommandKind::Snapshot };
            parse_config(kind, &a.common, a.sampling.as_ref(), a.snapshot_steps.as_ref(), None)
                .and_then(|s| execute_run(&s, &out_dir(&a.common)))
        }
        Command::SweepT(a) | Command::SweepTl(a) => {
            let kind = if matches!(cli.command, Command::SweepT(_)) { CommandKind::SweepT } else { CommandKind::SweepTl };
            parse_config(kind, &a.common, None, None, a.replicates)
                .and_then(|s| execute_sweep(&s, &out_dir(&a.common), exec))
        }
        Command::Selftest(a) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            return match oracle::selftest(&mut lock, a.seed) {
                Ok(true) => EXIT_OK,
                Ok(false) => EXIT_SELFTEST,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            };
        }
    };
    match outcome {
        Ok(files) => {
            let _ = writeln!(std::io::stderr(), "wrote {} files and {}", files.len(), io::MANIFEST_NAME);
            EXIT_OK
        }
        Err(e) => fail(&e),
    }
}
