//! Run configuration (TOML with dotted-path `--set` overrides), experiment
//! dispatch, output files, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{
    self, disk_benchmark, energy_sweep, fit_disk_rate, power_law_study, refinement_study,
    EnergySample, EnergyTrace, NormKind, Reference,
};
use crate::models::{
    allen_cahn, cahn_hilliard, initial_condition, mbe, AllenCahnParams, CahnHilliardParams,
    InitialCondition, MbeParams, RNG_ALGORITHM,
};
use crate::sav::{energy, init_consistent, ModelSpec, SavState};
use crate::spectral::{snapshot, Field, Grid2D};
use crate::stepper::{
    integrate, Method, ObserverEntry, SolverConfig, SolverMode, StepReport,
};
use crate::tableau::gauss_tableau;

/// Environment variable prepended to relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "HSAV_OUTPUT_ROOT";

fn one() -> f64 {
    1.0
}
fn default_stride() -> usize {
    1
}
fn default_tolerance() -> f64 {
    1e-12
}
fn default_max_iterations() -> usize {
    200
}
fn default_mode() -> String {
    "picard_preconditioned".into()
}
fn default_reference() -> String {
    "cauchy".into()
}
fn default_norm() -> String {
    "l2".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Single,
    Refinement,
    EnergySweep,
    Disk,
    PowerLaw,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    AllenCahn {
        #[serde(default = "one")]
        m: f64,
        #[serde(default = "one")]
        eps: f64,
        #[serde(default = "one")]
        gamma0: f64,
        #[serde(default = "one")]
        c0: f64,
    },
    CahnHilliard {
        lambda: f64,
        eps: f64,
        #[serde(default = "one")]
        gamma0: f64,
        #[serde(default = "one")]
        c0: f64,
    },
    Mbe {
        #[serde(default = "one")]
        m: f64,
        eps2: f64,
        #[serde(default = "one")]
        gamma0: f64,
        #[serde(default = "one")]
        c0: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub allow_unstable_tableau: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            mode: default_mode(),
            allow_unstable_tableau: false,
        }
    }
}

impl SolverSection {
    fn to_solver_config(&self) -> Result<SolverConfig> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "solver.tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("solver.max_iterations must be >= 1".into()));
        }
        let mode = match self.mode.as_str() {
            "picard_preconditioned" => SolverMode::PicardPreconditioned,
            "full_picard" => SolverMode::FullPicard,
            other => {
                return Err(Error::Config(format!(
                    "solver.mode '{other}' is not one of picard_preconditioned, full_picard"
                )))
            }
        };
        Ok(SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            mode,
            allow_unstable_tableau: self.allow_unstable_tableau,
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Disk { radius: f64 },
    ProductSine { kx: f64, ky: f64, amp: f64 },
    Random { amp: f64, mean: f64, seed: u64 },
    MbeTwoMode,
}

impl InitialConfig {
    fn to_kind(self) -> InitialCondition {
        match self {
            InitialConfig::Disk { radius } => InitialCondition::Disk { radius },
            InitialConfig::ProductSine { kx, ky, amp } => {
                InitialCondition::ProductSine { kx, ky, amp }
            }
            InitialConfig::Random { amp, mean, seed } => {
                InitialCondition::Random { amp, mean, seed }
            }
            InitialConfig::MbeTwoMode => InitialCondition::MbeTwoMode,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            InitialConfig::Random { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub directory: String,
    #[serde(default)]
    pub snapshot_stride: usize,
    #[serde(default = "default_stride")]
    pub energy_stride: usize,
    #[serde(default)]
    pub csv_fields: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSection {
    pub dt_list: Vec<f64>,
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default = "default_norm")]
    pub norm: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<String>,
    pub dt_list: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DiskSection {
    pub methods: Vec<String>,
    pub dt_list: Vec<f64>,
    pub fit_window: [f64; 2],
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSection {
    pub window: [f64; 2],
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub method: String,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverSection,
    pub initial: InitialConfig,
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub refinement: Option<RefinementSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub disk: Option<DiskSection>,
    #[serde(default)]
    pub power_law: Option<PowerLawSection>,
}

/// A schema-checked configuration with everything constructed and verified.
#[derive(Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub resolved_text: String,
    pub config_hash: String,
    pub grid: Grid2D,
    pub model: ModelSpec,
    pub method: Method,
    pub phi0: Field,
    pub solver: SolverConfig,
    pub seed: Option<u64>,
}

/// Top-level keys accepted as shorthand in `--set` overrides.
fn expand_override_path(path: &str) -> String {
    match path {
        "dt" | "t_end" => format!("time.{path}"),
        other => other.to_string(),
    }
}

fn apply_override(value: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{spec}'")))?;
    let path = expand_override_path(path.trim());
    let parsed = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = path.split('.').collect();
    let mut cursor = value;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Reads, overrides, and schema-checks a config file. Returns the resolved
/// TOML text alongside the parsed structure; unknown keys are rejected.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(RunConfig, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let resolved = toml::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("cannot serialize resolved config: {e}")))?;
    let config: RunConfig = value
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((config, resolved))
}

/// Semantic validation beyond the schema: constructs the grid, model,
/// method, initial data, and solver configuration.
pub fn prepare(config: RunConfig, resolved_text: String) -> Result<Prepared> {
    if !(config.time.dt > 0.0) {
        return Err(Error::Config(format!(
            "time.dt must be > 0, got {}",
            config.time.dt
        )));
    }
    if !(config.time.t_end >= 0.0) {
        return Err(Error::Config(format!(
            "time.t_end must be >= 0, got {}",
            config.time.t_end
        )));
    }
    let method = Method::parse(&config.method)?;
    if let Method::Gauss(s) = method {
        // Surface the tableau limit as a config-time violation.
        gauss_tableau(s).map_err(|e| Error::Config(e.to_string()))?;
    }
    let grid = Grid2D::new(
        config.grid.nx,
        config.grid.ny,
        config.grid.lx,
        config.grid.ly,
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    let model = build_model(&config.model, grid).map_err(|e| Error::Config(e.to_string()))?;
    let phi0 = initial_condition(config.initial.to_kind(), grid)
        .map_err(|e| Error::Config(e.to_string()))?;
    let solver = config.solver.to_solver_config()?;
    match config.experiment {
        ExperimentKind::Refinement if config.refinement.is_none() => {
            return Err(Error::Config(
                "experiment = refinement requires a [refinement] section".into(),
            ))
        }
        ExperimentKind::EnergySweep if config.sweep.is_none() => {
            return Err(Error::Config(
                "experiment = energy_sweep requires a [sweep] section".into(),
            ))
        }
        ExperimentKind::Disk if config.disk.is_none() => {
            return Err(Error::Config(
                "experiment = disk requires a [disk] section".into(),
            ))
        }
        ExperimentKind::PowerLaw if config.power_law.is_none() => {
            return Err(Error::Config(
                "experiment = power_law requires a [power_law] section".into(),
            ))
        }
        _ => {}
    }
    let seed = config.initial.seed();
    let config_hash = {
        let mut hasher = Sha256::new();
        hasher.update(resolved_text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    Ok(Prepared {
        config,
        resolved_text,
        config_hash,
        grid,
        model,
        method,
        phi0,
        solver,
        seed,
    })
}

fn build_model(config: &ModelConfig, grid: Grid2D) -> Result<ModelSpec> {
    match *config {
        ModelConfig::AllenCahn { m, eps, gamma0, c0 } => {
            allen_cahn(AllenCahnParams { m, eps, gamma0, c0 }, grid)
        }
        ModelConfig::CahnHilliard {
            lambda,
            eps,
            gamma0,
            c0,
        } => cahn_hilliard(
            CahnHilliardParams {
                lambda,
                eps,
                gamma0,
                c0,
            },
            grid,
        ),
        ModelConfig::Mbe {
            m,
            eps2,
            gamma0,
            c0,
        } => mbe(
            MbeParams {
                m,
                eps2,
                gamma0,
                c0,
            },
            grid,
        ),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| Method::parse(n)).collect()
}

fn parse_reference(name: &str) -> Result<Reference> {
    match name {
        "cauchy" => Ok(Reference::Cauchy),
        "finest_dt" => Ok(Reference::FinestDt),
        other => Err(Error::Config(format!(
            "refinement.reference '{other}' is not one of cauchy, finest_dt"
        ))),
    }
}

fn parse_norm(name: &str) -> Result<NormKind> {
    match name {
        "l2" => Ok(NormKind::L2h),
        "max" => Ok(NormKind::Max),
        other => Err(Error::Config(format!(
            "refinement.norm '{other}' is not one of l2, max"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Run execution and the manifest.

#[derive(Debug, Serialize)]
struct ManifestFile {
    name: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact_version: &'static str,
    config_hash: &'a str,
    rng_algorithm: &'static str,
    seed: Option<u64>,
    started_unix_ms: u128,
    ended_unix_ms: u128,
    wall_seconds: f64,
    config: &'a str,
    files: Vec<ManifestFile>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Tracks files written during a run so the manifest can list them.
struct OutputDir {
    root: PathBuf,
    files: Vec<ManifestFile>,
}

impl OutputDir {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes)?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_snapshot(&mut self, name: &str, field: &Field, also_csv: bool) -> Result<()> {
        let path = self.root.join(name);
        snapshot::write_field(&path, field)?;
        let bytes = fs::metadata(&path)?.len();
        self.files.push(ManifestFile {
            name: name.to_string(),
            bytes,
        });
        if also_csv {
            let mut text = String::from("x,y,value\n");
            let grid = field.grid();
            for j in 0..grid.nx() {
                for k in 0..grid.ny() {
                    text.push_str(&format!(
                        "{},{},{}\n",
                        grid.x(j),
                        grid.y(k),
                        field.values()[[j, k]]
                    ));
                }
            }
            self.write(&format!("{name}.csv"), text.as_bytes())?;
        }
        Ok(())
    }
}

fn sanitize_number(x: f64) -> String {
    format!("{x}").replace('.', "p").replace('-', "m")
}

/// Executes a prepared run: outputs per experiment kind plus a manifest.
/// Fails without touching existing outputs unless `force` is set.
pub fn run(prepared: Prepared, force: bool, csv_fields_flag: bool) -> Result<()> {
    let root = resolve_output_dir(&prepared.config.outputs.directory);
    let manifest_path = root.join("manifest.json");
    let failed_path = root.join("manifest.failed.json");
    if (manifest_path.exists() || failed_path.exists()) && !force {
        return Err(Error::Config(format!(
            "output directory {} already holds a manifest; pass --force to overwrite",
            root.display()
        )));
    }
    fs::create_dir_all(&root)?;
    let _ = fs::remove_file(&manifest_path);
    let _ = fs::remove_file(&failed_path);

    let started = unix_ms();
    let clock = Instant::now();
    let mut out = OutputDir {
        root: root.clone(),
        files: Vec::new(),
    };
    let csv_fields = csv_fields_flag || prepared.config.outputs.csv_fields;
    let result = execute_experiment(&prepared, &mut out, csv_fields);

    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        config_hash: &prepared.config_hash,
        rng_algorithm: RNG_ALGORITHM,
        seed: prepared.seed,
        started_unix_ms: started,
        ended_unix_ms: unix_ms(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        config: &prepared.resolved_text,
        files: out.files,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    let target = if result.is_ok() {
        &manifest_path
    } else {
        &failed_path
    };
    // Atomic publication: write aside, then rename into place.
    let tmp = root.join("manifest.tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, target)?;
    result
}

fn resolve_output_dir(directory: &str) -> PathBuf {
    let dir = PathBuf::from(directory);
    if dir.is_absolute() {
        return dir;
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(dir),
        None => dir,
    }
}

fn manifest_line(prepared: &Prepared) -> String {
    format!(
        "config_sha256={} seed={}",
        prepared.config_hash,
        prepared
            .seed
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into())
    )
}

fn execute_experiment(prepared: &Prepared, out: &mut OutputDir, csv_fields: bool) -> Result<()> {
    let cfg = &prepared.solver;
    let line = manifest_line(prepared);
    let time = prepared.config.time;
    match prepared.config.experiment {
        ExperimentKind::Single => {
            let state = init_consistent(prepared.phi0.clone(), &prepared.model)?;
            let e0 = energy(&state, &prepared.model)?;
            let mut samples = vec![EnergySample {
                t: state.t,
                modified: e0.modified,
                raw: e0.raw,
                q: state.q,
            }];
            let snapshot_stride = prepared.config.outputs.snapshot_stride;
            let mut snapshots: Vec<(usize, Field)> = Vec::new();
            let mut sample_err: Option<Error> = None;
            let final_state;
            {
                let model = &prepared.model;
                let mut observers = vec![ObserverEntry::every(
                    prepared.config.outputs.energy_stride,
                    |_, st: &SavState, _: &StepReport| match energy(st, model) {
                        Ok(e) => samples.push(EnergySample {
                            t: st.t,
                            modified: e.modified,
                            raw: e.raw,
                            q: st.q,
                        }),
                        Err(e) => sample_err = Some(e),
                    },
                )];
                if snapshot_stride > 0 {
                    observers.push(ObserverEntry::every(
                        snapshot_stride,
                        |step, st: &SavState, _: &StepReport| {
                            snapshots.push((step, st.phi.clone()));
                        },
                    ));
                }
                final_state = integrate(
                    state,
                    model,
                    prepared.method,
                    time.dt,
                    time.t_end,
                    &mut observers,
                    cfg,
                )?;
            }
            if let Some(e) = sample_err {
                return Err(e);
            }
            let trace = EnergyTrace {
                method: prepared.method,
                dt: time.dt,
                samples,
            };
            let mut buf = Vec::new();
            harness::write_energy_csv(&mut buf, &trace, &line)?;
            out.write("energy.csv", &buf)?;
            for (step, field) in &snapshots {
                out.write_snapshot(&format!("phi_{step:06}.fld"), field, csv_fields)?;
            }
            out.write_snapshot("phi_final.fld", &final_state.phi, csv_fields)?;
            Ok(())
        }
        ExperimentKind::Refinement => {
            let section = prepared.config.refinement.as_ref().expect("validated");
            let table = refinement_study(
                &prepared.model,
                prepared.method,
                &prepared.phi0,
                &section.dt_list,
                time.t_end,
                parse_reference(&section.reference)?,
                parse_norm(&section.norm)?,
                cfg,
            )?;
            let mut buf = Vec::new();
            harness::write_convergence_csv(&mut buf, &table, &line)?;
            out.write("convergence.csv", &buf)?;
            for row in &table.rows {
                println!(
                    "dt = {:<10} error = {:<12.5e} order = {}",
                    row.dt,
                    row.error,
                    row.observed_order
                        .map(|o| format!("{o:.3}"))
                        .unwrap_or_else(|| "-".into())
                );
            }
            Ok(())
        }
        ExperimentKind::EnergySweep => {
            let section = prepared.config.sweep.as_ref().expect("validated");
            let methods = parse_methods(&section.methods)?;
            let runs = energy_sweep(
                &prepared.model,
                &methods,
                &section.dt_list,
                time.t_end,
                prepared.config.outputs.energy_stride,
                &prepared.phi0,
                cfg,
            );
            let mut first_error = None;
            for run in &runs {
                match &run.result {
                    Ok(trace) => {
                        let mut buf = Vec::new();
                        harness::write_energy_csv(&mut buf, trace, &line)?;
                        out.write(
                            &format!(
                                "energy_{}_dt{}.csv",
                                run.method,
                                sanitize_number(run.dt)
                            ),
                            &buf,
                        )?;
                    }
                    Err(e) => {
                        eprintln!("run {} dt={} failed: {e}", run.method, run.dt);
                        if first_error.is_none() {
                            first_error = Some(format!("{} dt={}: {e}", run.method, run.dt));
                        }
                    }
                }
            }
            match first_error {
                None => Ok(()),
                Some(msg) => Err(Error::StepFailed {
                    step: 0,
                    time: 0.0,
                    source: Box::new(Error::Config(format!("sweep had failing runs: {msg}"))),
                }),
            }
        }
        ExperimentKind::Disk => {
            let section = prepared.config.disk.as_ref().expect("validated");
            let methods = parse_methods(&section.methods)?;
            let runs = disk_benchmark(
                &prepared.model,
                &prepared.phi0,
                &methods,
                &section.dt_list,
                time.t_end,
                prepared.config.outputs.energy_stride,
                cfg,
            );
            let mut fits = String::from("method,dt,rate,intercept,rms_residual\n");
            for run in runs {
                let trace = run.result?;
                let mut buf = Vec::new();
                harness::write_disk_csv(&mut buf, &trace, &line)?;
                out.write(
                    &format!("disk_{}_dt{}.csv", run.method, sanitize_number(run.dt)),
                    &buf,
                )?;
                let (intercept, rate, residual) =
                    fit_disk_rate(&trace, (section.fit_window[0], section.fit_window[1]))?;
                println!(
                    "{} dt={}: dV/dt = {rate:.6} (target -2*pi = {:.6})",
                    run.method,
                    run.dt,
                    -2.0 * std::f64::consts::PI
                );
                fits.push_str(&format!(
                    "{},{},{rate},{intercept},{residual}\n",
                    run.method, run.dt
                ));
            }
            out.write("disk_fits.csv", fits.as_bytes())?;
            Ok(())
        }
        ExperimentKind::PowerLaw => {
            let section = prepared.config.power_law.as_ref().expect("validated");
            let study = power_law_study(
                &prepared.model,
                prepared.method,
                time.dt,
                time.t_end,
                Some((section.window[0], section.window[1])),
                prepared.config.outputs.energy_stride,
                &prepared.phi0,
                cfg,
            )?;
            let mut buf = Vec::new();
            harness::write_energy_csv(&mut buf, &study.trace, &line)?;
            out.write("energy.csv", &buf)?;
            let fit_text = format!(
                "# manifest: {line}\nslope,intercept,window_lo,window_hi,rms_residual\n{},{},{},{},{}\n",
                study.fit.slope,
                study.fit.intercept,
                study.fit.fit_window.0,
                study.fit.fit_window.1,
                study.fit.residual
            );
            out.write("power_law.csv", fit_text.as_bytes())?;
            println!(
                "power-law slope = {:.4} over t in [{}, {}]",
                study.fit.slope, study.fit.fit_window.0, study.fit.fit_window.1
            );
            Ok(())
        }
    }
}

/// `validate` verb: schema check plus semantic construction; prints the
/// resolved config without running anything.
pub fn validate(path: &Path, overrides: &[String]) -> Result<()> {
    let (config, resolved) = load_config(path, overrides)?;
    let prepared = prepare(config, resolved)?;
    println!("OK");
    print!("{}", prepared.resolved_text);
    Ok(())
}

/// `tableau` verb: the s-stage Gauss Butcher table and its stability report.
pub fn describe_tableau(stages: usize) -> Result<String> {
    let tab = gauss_tableau(stages)?;
    let report = tab.check_stability();
    Ok(format!(
        "{tab}stability: max residual {:.3e}, min weight {:.16}, passes: {}\n",
        report.max_residual, report.min_weight, report.passes
    ))
}
