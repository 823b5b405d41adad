//! Command-line front end.
//!
//! Settings are resolved as defaults, then a flat `key=value` config file
//! (`--config`), then flags; flags win. The resolved settings are written
//! into `manifest.json` together with their SHA-256, the crate version and
//! the wall time. The manifest is written on every run, also on failure.
//!
//! Output formats:
//! - CSV: comma-separated, header row, every value printed with 17
//!   significant digits (`{:.16e}`). Fields use columns `p,value`.
//! - JSON: UTF-8, object keys in a fixed order.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical error.
//!
//! Worker threads: `--threads`, else `threads` in the config file, else the
//! `PHONON_THREADS` environment variable, else rayon's default.

use crate::collision::{self, BumpPlacement, Field, Grid, Interp};
use crate::dynamics::{self, loglog_fit, EvolutionConfig, Integrator};
use crate::equilibria;
use crate::error::{PhononError, Result};
use crate::linearized::{self, AssemblyOptions, LinOperator, RjParams};
use crate::manifold;
use crate::quadrature::ResonantRule;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "phonon", version, about = "FPUT-beta wave kinetic equation experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Flat key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub grid_n: Option<usize>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// linear or cubic
    #[arg(long, global = true)]
    pub interp: Option<String>,
    #[arg(long, global = true)]
    pub rule_panels: Option<usize>,
    #[arg(long, global = true)]
    pub rule_order: Option<usize>,
    #[arg(long, global = true)]
    pub rule_levels: Option<usize>,
    /// Directory for the cached linearized operator.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Multiplier a(p) and its edge exponent.
    Multiplier,
    /// Spectrum of the assembled linearized operator.
    Spectrum,
    /// Decay of ||omega^mu e^{tL} g0||_inf.
    LinDecay {
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        /// cos (1 + 0.3 cos p) or random
        #[arg(long)]
        data: Option<String>,
    },
    /// Nonlinear evolution of a perturbed equilibrium.
    Nonlin {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        data: Option<String>,
        /// Also run eps in {1e-3, 1e-2, 1e-1}.
        #[arg(long)]
        probe: bool,
    },
    /// Equilibrium with prescribed mass and energy.
    RjMatch {
        #[arg(long)]
        mass: Option<f64>,
        #[arg(long)]
        energy: Option<f64>,
    },
    /// L^p norms of the collision operator on the three-bump family.
    LpBlowup {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        k_min: Option<u32>,
        #[arg(long)]
        k_max: Option<u32>,
        /// reachable or as-written
        #[arg(long)]
        placement: Option<String>,
    },
    /// Resonance identity suite.
    Verify {
        #[arg(long)]
        random_points: Option<usize>,
        #[arg(long)]
        x_values: Option<usize>,
        #[arg(long)]
        bound_grid: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Multiplier => "multiplier",
            Command::Spectrum => "spectrum",
            Command::LinDecay { .. } => "lin-decay",
            Command::Nonlin { .. } => "nonlin",
            Command::RjMatch { .. } => "rj-match",
            Command::LpBlowup { .. } => "lp-blowup",
            Command::Verify { .. } => "verify",
        }
    }

    fn defaults(&self) -> Vec<(&'static str, String)> {
        let s = |v: &str| v.to_string();
        let mut d = vec![
            ("grid_n", s("512")),
            ("beta", s("1")),
            ("gamma", s("1")),
            ("output_dir", s("out")),
            ("seed", s("0")),
            ("interp", s("cubic")),
            ("rule_panels", ResonantRule::default().panels.to_string()),
            ("rule_order", ResonantRule::default().order.to_string()),
            ("rule_levels", ResonantRule::default().levels.to_string()),
        ];
        let extra: Vec<(&'static str, String)> = match self {
            Command::Multiplier => {
                d[0].1 = s("1024");
                vec![]
            }
            Command::Spectrum => vec![],
            Command::LinDecay { .. } => {
                vec![("mu", s("0.5")), ("nu", s("0.5")), ("t_final", s("1000")), ("points", s("60")), ("data", s("cos"))]
            }
            Command::Nonlin { .. } => {
                d[0].1 = s("256");
                vec![
                    ("eps", s("0.01")),
                    ("t_final", s("1000")),
                    ("dt", s("1")),
                    ("points", s("60")),
                    ("data", s("random")),
                    ("probe", s("false")),
                ]
            }
            Command::RjMatch { .. } => vec![("mass", s("3")), ("energy", s("1"))],
            Command::LpBlowup { .. } => {
                d[5].1 = s("linear");
                vec![("p", s("2")), ("k_min", s("4")), ("k_max", s("9")), ("placement", s("reachable"))]
            }
            Command::Verify { .. } => vec![("random_points", s("10000")), ("x_values", s("100")), ("bound_grid", s("2000"))],
        };
        d.extend(extra);
        d
    }

    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        fn o<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(|x| x.to_string())
        }
        match self {
            Command::Multiplier | Command::Spectrum => vec![],
            Command::LinDecay { mu, nu, t_final, points, data } => vec![
                ("mu", o(mu)),
                ("nu", o(nu)),
                ("t_final", o(t_final)),
                ("points", o(points)),
                ("data", o(data)),
            ],
            Command::Nonlin { eps, t_final, dt, points, data, probe } => vec![
                ("eps", o(eps)),
                ("t_final", o(t_final)),
                ("dt", o(dt)),
                ("points", o(points)),
                ("data", o(data)),
                ("probe", probe.then(|| "true".to_string())),
            ],
            Command::RjMatch { mass, energy } => vec![("mass", o(mass)), ("energy", o(energy))],
            Command::LpBlowup { p, k_min, k_max, placement } => {
                vec![("p", o(p)), ("k_min", o(k_min)), ("k_max", o(k_max)), ("placement", o(placement))]
            }
            Command::Verify { random_points, x_values, bound_grid } => vec![
                ("random_points", o(random_points)),
                ("x_values", o(x_values)),
                ("bound_grid", o(bound_grid)),
            ],
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: String,
    pub settings: BTreeMap<String, String>,
    pub threads: Option<usize>,
}

/// Parses a flat `key=value` file; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, val)) = line.split_once('=') else {
            return Err(PhononError::Invalid(format!("config line {}: expected key=value", k + 1)));
        };
        out.insert(key.trim().replace('-', "_"), val.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(common: &Common, cmd: &Command) -> Result<Self> {
        let mut settings: BTreeMap<String, String> =
            cmd.defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut file_threads = None;
        if let Some(path) = &common.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PhononError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text)? {
                if k == "threads" {
                    file_threads = Some(parse_usize("threads", &v)?);
                } else if settings.contains_key(&k) || k == "cache_dir" {
                    settings.insert(k, v);
                } else {
                    return Err(PhononError::Invalid(format!("unknown config key '{k}' for {}", cmd.name())));
                }
            }
        }
        let o = |v: Option<String>| v;
        let common_flags = [
            ("grid_n", o(common.grid_n.map(|v| v.to_string()))),
            ("beta", o(common.beta.map(|v| v.to_string()))),
            ("gamma", o(common.gamma.map(|v| v.to_string()))),
            ("output_dir", o(common.output_dir.as_ref().map(|v| v.display().to_string()))),
            ("seed", o(common.seed.map(|v| v.to_string()))),
            ("interp", o(common.interp.clone())),
            ("rule_panels", o(common.rule_panels.map(|v| v.to_string()))),
            ("rule_order", o(common.rule_order.map(|v| v.to_string()))),
            ("rule_levels", o(common.rule_levels.map(|v| v.to_string()))),
            ("cache_dir", o(common.cache_dir.as_ref().map(|v| v.display().to_string()))),
        ];
        for (k, v) in common_flags.into_iter().chain(cmd.flags()) {
            if let Some(v) = v {
                settings.insert(k.to_string(), v);
            }
        }
        let threads = match common.threads.or(file_threads) {
            Some(t) => Some(t),
            None => match std::env::var("PHONON_THREADS") {
                Ok(v) if !v.trim().is_empty() => Some(parse_usize("PHONON_THREADS", v.trim())?),
                _ => None,
            },
        };
        if threads == Some(0) {
            return Err(PhononError::Invalid("thread count must be positive".into()));
        }
        let cfg = RunConfig { subcommand: cmd.name().to_string(), settings, threads };
        cfg.validate()?;
        Ok(cfg)
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.settings.get(key).map(|s| s.as_str()).ok_or_else(|| PhononError::Invalid(format!("missing setting {key}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.raw(key)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| PhononError::Invalid(format!("{key} = '{v}' is not a finite number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        parse_usize(key, self.raw(key)?)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(PhononError::Invalid(format!("{key} = '{v}' is not a boolean"))),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.settings.get("output_dir").map(|s| s.as_str()).unwrap_or("out"))
    }

    pub fn params(&self) -> Result<RjParams> {
        RjParams::new(self.f64("beta")?, self.f64("gamma")?)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.usize("grid_n")?)
    }

    pub fn rule(&self) -> Result<ResonantRule> {
        let r = ResonantRule {
            panels: self.usize("rule_panels")?,
            order: self.usize("rule_order")?,
            levels: self.usize("rule_levels")?,
            ratio: 0.5,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn interp(&self) -> Result<Interp> {
        match self.raw("interp")? {
            "linear" => Ok(Interp::Linear),
            "cubic" => Ok(Interp::Cubic),
            v => Err(PhononError::Invalid(format!("interp = '{v}', expected linear or cubic"))),
        }
    }

    pub fn assembly(&self) -> Result<AssemblyOptions> {
        Ok(AssemblyOptions { interp: self.interp()?, rule: self.rule()? })
    }

    fn validate(&self) -> Result<()> {
        let n = self.usize("grid_n")?;
        if !n.is_power_of_two() || !(64..=4096).contains(&n) {
            return Err(PhononError::Invalid(format!("grid_n = {n} must be a power of two in [64, 4096]")));
        }
        self.usize("seed")?;
        self.params()?;
        self.assembly()?;
        Ok(())
    }

    /// SHA-256 of the resolved `key=value` lines.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        text.push_str(&format!("subcommand={}\n", self.subcommand));
        for (k, v) in &self.settings {
            let _ = writeln!(text, "{k}={v}");
        }
        let d = Sha256::digest(text.as_bytes());
        d.as_slice().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| PhononError::Invalid(format!("{key} = '{v}' is not a non-negative integer")))
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|&v| fmt_num(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_field_csv(path: &Path, f: &Field) -> Result<()> {
    let rows: Vec<Vec<f64>> = f.values.iter().enumerate().map(|(j, &v)| vec![f.grid.node(j), v]).collect();
    write_csv(path, &["p", "value"], &rows)
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| PhononError::Invalid(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// JSON number, or `null` for non-finite values.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn exit_code(e: &PhononError) -> i32 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    run_cli(&cli)
}

pub fn run_cli(cli: &Cli) -> i32 {
    let start = Instant::now();
    let cfg = match RunConfig::resolve(&cli.common, &cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("phonon: {e}");
            // best effort: the manifest goes to the requested directory if it can be named
            let dir = cli.common.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let partial = RunConfig { subcommand: cli.command.name().into(), settings: BTreeMap::new(), threads: None };
            let _ = write_manifest(&dir, &partial, start, Err(&e));
            return exit_code(&e);
        }
    };
    let dir = cfg.output_dir();
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("phonon: cannot create {}: {e}", dir.display());
        return 2;
    }
    let outcome = match cfg.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| run(&cfg, &dir)),
            Err(e) => Err(PhononError::Invalid(format!("thread pool: {e}"))),
        },
        None => run(&cfg, &dir),
    };
    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("phonon: {e}");
            exit_code(e)
        }
    };
    if let Err(e) = write_manifest(&dir, &cfg, start, outcome.as_ref().map(|_| ())) {
        eprintln!("phonon: cannot write manifest: {e}");
        return if code == 0 { 3 } else { code };
    }
    code
}

fn write_manifest(dir: &Path, cfg: &RunConfig, start: Instant, outcome: std::result::Result<(), &PhononError>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (status, code, err) = match outcome {
        Ok(()) => ("ok", 0, Value::Null),
        Err(e) => (if e.is_validation() { "validation_error" } else { "numerical_error" }, exit_code(e), json!(e.to_string())),
    };
    let settings: serde_json::Map<String, Value> = cfg.settings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let m = json!({
        "subcommand": cfg.subcommand,
        "status": status,
        "exit_code": code,
        "error": err,
        "config_hash": cfg.hash(),
        "config": Value::Object(settings),
        "threads": cfg.threads,
        "versions": {
            "phonon": env!("CARGO_PKG_VERSION"),
            "target": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        },
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("manifest.json"), &m)
}

/// Runs the configured subcommand, writing its artifacts into `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<()> {
    match cfg.subcommand.as_str() {
        "multiplier" => run_multiplier(cfg, dir),
        "spectrum" => run_spectrum(cfg, dir),
        "lin-decay" => run_lin_decay(cfg, dir),
        "nonlin" => run_nonlin(cfg, dir),
        "rj-match" => run_rj_match(cfg, dir),
        "lp-blowup" => run_lp_blowup(cfg, dir),
        "verify" => run_verify(cfg, dir),
        s => Err(PhononError::Invalid(format!("unknown subcommand {s}"))),
    }
}

/// Edge window of the multiplier fit, in `p`.
pub const MULTIPLIER_WINDOW: (f64, f64) = (1e-3, 1e-1);

/// Log-log slope of `a(p)` against `sin(p/2)` over the nodes with `p` in `window`.
pub fn multiplier_exponent(a: &Field, window: (f64, f64)) -> Result<(f64, f64, usize)> {
    let pts: Vec<(f64, f64)> = a
        .values
        .iter()
        .enumerate()
        .map(|(j, &v)| (a.grid.node(j), v))
        .filter(|(p, _)| *p >= window.0 && *p <= window.1)
        .map(|(p, v)| ((0.5 * p).sin(), v))
        .collect();
    let (s, e) = loglog_fit(&pts, 8)?;
    Ok((s, e, pts.len()))
}

fn run_multiplier(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let params = cfg.params()?;
    let a = linearized::multiplier_a_with(&params, cfg.grid()?, &cfg.rule()?)?;
    write_field_csv(&dir.join("a.csv"), &a)?;
    let (exponent, stderr, points) = multiplier_exponent(&a, MULTIPLIER_WINDOW)?;
    write_json(
        &dir.join("fit.json"),
        &json!({
            "exponent": exponent,
            "stderr": stderr,
            "target": 5.0 / 3.0,
            "window_p": [MULTIPLIER_WINDOW.0, MULTIPLIER_WINDOW.1],
            "points": points,
            "grid_n": a.grid.n(),
            "beta": params.beta,
            "gamma": params.gamma,
        }),
    )
}

fn operator(cfg: &RunConfig, dir: &Path) -> Result<LinOperator> {
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let opts = cfg.assembly()?;
    let cache = cfg.settings.get("cache_dir").map(PathBuf::from).unwrap_or_else(|| dir.join("cache"));
    std::fs::create_dir_all(&cache)?;
    let h: String = opts.hash()[..6].iter().map(|b| format!("{b:02x}")).collect();
    let file = cache.join(format!("linop_n{}_b{}_g{}_{h}.bin", grid.n(), params.beta, params.gamma));
    linearized::assemble_cached(&params, grid, &opts, &file)
}

fn run_spectrum(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let params = cfg.params()?;
    let l = linearized::assemble_unchecked(&params, cfg.grid()?, &cfg.assembly()?)?;
    let rows: Vec<Vec<f64>> = l.eigenvalues.iter().enumerate().map(|(k, &v)| vec![k as f64, v]).collect();
    write_csv(&dir.join("eigenvalues.csv"), &["index", "eigenvalue"], &rows)?;
    write_field_csv(&dir.join("a.csv"), &l.a)?;
    let check = l.check_spectrum();
    write_json(
        &dir.join("spectrum.json"),
        &json!({
            "grid_n": l.n(),
            "beta": params.beta,
            "gamma": params.gamma,
            "tol_ker": l.tol_ker,
            "spectral_tol": l.spectral_tol,
            "max_eigenvalue": l.max_eigenvalue(),
            "min_eigenvalue": l.eigenvalues[0],
            "near_null_count": l.near_null_count(),
            "null_space_angle": l.null_space_angle(),
            "symmetry_defect": l.symmetry_defect(),
            "spectrum_ok": check.is_ok(),
        }),
    )?;
    check
}

/// Initial data of the decay experiments: `cos` is `1 + 0.3 cos p`, `random`
/// a seeded smooth Fourier series.
pub fn base_field(kind: &str, grid: Grid, seed: u64) -> Result<Field> {
    match kind {
        "cos" => Field::from_fn(grid, |p| 1.0 + 0.3 * p.cos()),
        "random" => Ok(linearized::random_smooth(grid, 8, seed)),
        v => Err(PhononError::Invalid(format!("data = '{v}', expected cos or random"))),
    }
}

fn run_lin_decay(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (mu, nu, t_final) = (cfg.f64("mu")?, cfg.f64("nu")?, cfg.f64("t_final")?);
    let points = cfg.usize("points")?;
    if !(t_final >= 100.0) || points < 16 {
        return Err(PhononError::Invalid("lin-decay needs t_final >= 100 and points >= 16".into()));
    }
    let kind = cfg.raw("data")?.to_string();
    let grid = cfg.grid()?;
    let base = base_field(&kind, grid, cfg.usize("seed")? as u64)?;
    let l = operator(cfg, dir)?;
    let g0 = linearized::admissible_data(&l.params, &base, nu, 1.0)?;
    let t_grid = dynamics::geometric_grid(1.0, t_final, points);
    let rep = linearized::measure_linear_decay(&l, &g0, mu, nu, &t_grid)?;
    let rows: Vec<Vec<f64>> = rep.series.iter().map(|&(t, v)| vec![t, v]).collect();
    write_csv(&dir.join("decay.csv"), &["t", "sup_weighted"], &rows)?;
    write_json(
        &dir.join("decay.json"),
        &json!({
            "mu": mu,
            "nu": nu,
            "data": kind,
            "exponent": rep.exponent,
            "stderr": rep.stderr,
            "fit_window": [rep.fit_window.0, rep.fit_window.1],
            "mass_drift": rep.conserved_drift.0,
            "energy_drift": rep.conserved_drift.1,
            "grid_n": grid.n(),
        }),
    )
}

/// One nonlinear perturbation run; returns the trajectory and the fitted exponent over `[T/10, T]`.
pub fn nonlinear_run(
    l: &LinOperator,
    sys: &dynamics::Perturbation,
    base: &Field,
    eps: f64,
    dt: f64,
    t_final: f64,
    points: usize,
) -> Result<(dynamics::Trajectory, dynamics::DecayReport)> {
    let g0 = linearized::admissible_data(&l.params, base, 0.5, eps)?;
    let cfg = EvolutionConfig {
        dt,
        t_final,
        integrator: Integrator::Rk4,
        record_every: 0,
        checkpoints: dynamics::geometric_grid(1.0, t_final, points),
        norms: Vec::new(),
        delta: 1e-3,
    };
    let traj = dynamics::evolve_perturbation_with(&g0, sys, &cfg)?;
    let rep = dynamics::decay_report(&traj, (t_final / 10.0, t_final))?;
    Ok((traj, rep))
}

pub const EPS_PROBE: [f64; 3] = [1e-3, 1e-2, 1e-1];

fn run_nonlin(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (eps, t_final, dt) = (cfg.f64("eps")?, cfg.f64("t_final")?, cfg.f64("dt")?);
    let points = cfg.usize("points")?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(PhononError::Invalid(format!("eps = {eps} outside (0, 1)")));
    }
    if !(t_final >= 10.0 * dt) || points < 16 {
        return Err(PhononError::Invalid("nonlin needs t_final >= 10 dt and points >= 16".into()));
    }
    let kind = cfg.raw("data")?.to_string();
    let base = base_field(&kind, cfg.grid()?, cfg.usize("seed")? as u64)?;
    let l = operator(cfg, dir)?;
    let sys = dynamics::Perturbation::new(&l)?;
    let (traj, rep) = nonlinear_run(&l, &sys, &base, eps, dt, t_final, points)?;
    let rows: Vec<Vec<f64>> = traj
        .records
        .iter()
        .map(|r| vec![r.t, r.mass, r.energy, r.entropy, r.sup_w12, r.sup_w16, r.l2])
        .collect();
    write_csv(&dir.join("trajectory.csv"), &["t", "mass", "energy", "entropy", "sup_w12", "sup_w16", "l2"], &rows)?;
    write_json(
        &dir.join("decay.json"),
        &json!({
            "eps": eps,
            "data": kind,
            "exponent": rep.exponent,
            "stderr": rep.stderr,
            "fit_window": [rep.fit_window.0, rep.fit_window.1],
            "mass_drift": rep.conserved_drift.0,
            "energy_drift": rep.conserved_drift.1,
            "b_norm": traj.b_norm(),
            "grid_n": l.n(),
        }),
    )?;
    if cfg.bool("probe")? {
        let mut runs = Vec::new();
        let mut largest = Value::Null;
        for &e in &EPS_PROBE {
            let entry = match nonlinear_run(&l, &sys, &base, e, dt, t_final, points) {
                Ok((tr, r)) => {
                    if r.exponent <= -0.5 {
                        largest = json!(e);
                    }
                    json!({"eps": e, "exponent": r.exponent, "stderr": r.stderr, "b_norm": tr.b_norm(), "error": Value::Null})
                }
                Err(err) => json!({"eps": e, "exponent": Value::Null, "stderr": Value::Null, "b_norm": Value::Null, "error": err.to_string()}),
            };
            runs.push(entry);
        }
        write_json(&dir.join("probe.json"), &json!({"runs": runs, "largest_decaying_eps": largest}))?;
    }
    Ok(())
}

fn run_rj_match(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (m0, e0) = (cfg.f64("mass")?, cfg.f64("energy")?);
    let r = equilibria::match_rj(m0, e0)?;
    let (beta, gamma, res_m, res_e) = match r.params {
        Some(p) => {
            let (m, e) = equilibria::mass_energy(&p)?;
            (p.beta, p.gamma, (m - m0).abs() / m0, (e - e0).abs() / e0)
        }
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    write_json(
        &dir.join("match.json"),
        &json!({
            "matched": r.matched,
            "mass": m0,
            "energy": e0,
            "ratio": r.ratio,
            "ratio_limit": equilibria::RATIO_LIMIT,
            "beta": num(beta),
            "gamma": num(gamma),
            "theta": num(r.theta),
            "r": num(r.r),
            "mass_residual": num(res_m),
            "energy_residual": num(res_e),
        }),
    )
}

/// `(eps, n, ||f^eps||_p, ||C[f^eps]||_p)` for `eps = 2^-k`, `k in ks`.
pub fn lp_series(p: f64, ks: std::ops::RangeInclusive<u32>, placement: BumpPlacement, interp: Interp) -> Result<Vec<[f64; 4]>> {
    let mut out = Vec::new();
    for k in ks {
        let eps = 2f64.powi(-(k as i32));
        let grid = collision::grid_for_eps(eps)?;
        let f = collision::epsilon_family(eps, grid, p, placement)?;
        let c = collision::collision_operator_sparse(&f, interp)?;
        out.push([eps, grid.n() as f64, collision::lp_norm(&f, p)?, collision::lp_norm(&c, p)?]);
    }
    Ok(out)
}

fn run_lp_blowup(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = cfg.f64("p")?;
    let (k0, k1) = (cfg.usize("k_min")? as u32, cfg.usize("k_max")? as u32);
    if !(p >= 1.0) || k0 < 4 || k1 < k0 + 2 || k1 > 10 {
        return Err(PhononError::Invalid("lp-blowup needs p >= 1 and 4 <= k_min, k_min + 2 <= k_max <= 10".into()));
    }
    let placement = match cfg.raw("placement")? {
        "reachable" => BumpPlacement::Reachable,
        "as-written" | "as_written" => BumpPlacement::AsWritten,
        v => return Err(PhononError::Invalid(format!("placement = '{v}', expected reachable or as-written"))),
    };
    let rows = lp_series(p, k0..=k1, placement, cfg.interp()?)?;
    write_csv(
        &dir.join("lp.csv"),
        &["eps", "grid_n", "f_norm", "c_norm"],
        &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    )?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[3])).collect();
    let (slope, stderr) = loglog_fit(&pts, 3)?;
    write_json(
        &dir.join("fit.json"),
        &json!({"p": p, "slope": slope, "stderr": stderr, "predicted": 1.0 - 3.0 / p, "k_min": k0, "k_max": k1}),
    )
}

fn run_verify(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let checks = manifold::identity_suite(
        cfg.usize("seed")? as u64,
        cfg.usize("random_points")?,
        cfg.usize("x_values")?,
        cfg.usize("bound_grid")?,
    );
    let all = checks.iter().all(|c| c.pass);
    let list: Vec<Value> = checks
        .iter()
        .map(|c| json!({"name": c.name, "value": c.value, "bound": c.bound, "pass": c.pass}))
        .collect();
    write_json(&dir.join("verify.json"), &json!({"pass": all, "checks": list}))?;
    for c in &checks {
        eprintln!("{} {} {:e} (bound {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    if all {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(PhononError::Verification(failed.join(", ")))
    }
}
