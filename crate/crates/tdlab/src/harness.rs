//! Configuration-driven experiment runner: builds instances, runs algorithm
//! grids across seeded repetitions (optionally in parallel), and emits
//! CSV/JSON outputs for curves, envelopes, condition reports, and variance
//! studies.
//!
//! Output contract: CSV files use '.' decimals, 17 significant digits, and
//! LF line endings, and are byte-identical across reruns with the same
//! configuration and seed, regardless of thread count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{lookup, AlgoParams, RunObserver, Sampling, UpdateSnapshot};
use crate::diagnostics::{
    aggregate_envelope, default_grid, mc_update_variance, Envelope, RunTrace, TracePoint,
};
use crate::env::{
    cycle2, derive_seed, generate_garnet, make_features_gaussian, make_frozen_lake, make_policy,
    IidSampler, ModelFile, PolicyKind,
};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::theory::{
    check_conditions, constants_iid, constants_markov, epsilon_search, vr_bounds, ConditionReport,
    Constants, ScheduleCoefficients, SearchResult, Setting, VRBounds,
};

/// Which problem the experiment runs on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    /// One of "garnet", "frozen_lake", "cycle2", "file".
    pub kind: String,
    /// Garnet parameters (required for kind = "garnet").
    pub n_states: Option<usize>,
    pub n_actions: Option<usize>,
    pub branching: Option<usize>,
    /// Feature dimension (garnet and frozen_lake).
    pub d: Option<usize>,
    /// Discount factor (garnet and frozen_lake); cycle2 fixes its own.
    pub gamma: Option<f64>,
    /// Model file path (required for kind = "file").
    pub path: Option<String>,
    /// Seed for instance generation (model, features, random policies).
    #[serde(default)]
    pub seed: u64,
    /// Target policy: "random" (default) or "uniform".
    #[serde(default = "default_target")]
    pub target: String,
    /// Behavior policy: "uniform" (default) or "random".
    #[serde(default = "default_behavior")]
    pub behavior: String,
    /// Projection-radius safety factor (>= 1).
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_target() -> String {
    "random".to_string()
}
fn default_behavior() -> String {
    "uniform".to_string()
}
fn default_safety() -> f64 {
    1.0
}

/// One algorithm entry in the run grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSpec {
    /// Registry name: td, tdc, vrtd, vrtdc_iid, vrtdc_markov.
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    /// Batch / epoch length M.
    pub batch_size: usize,
    pub epochs: usize,
    /// Sample regime for td/tdc/vrtd: "iid" (default) or "markov".
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
}

fn default_sampling() -> Sampling {
    Sampling::Iid
}

/// Optional condition-report settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    /// "iid" or "markov".
    pub setting: Setting,
    /// Explicit accuracy target; omitted means exhaustive search mode.
    pub epsilon: Option<f64>,
    /// Explicit (alpha, beta, batch_size) to check instead of a schedule.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub batch_size: Option<u64>,
    /// Schedule coefficients (all default 1).
    pub c_alpha: Option<f64>,
    pub c_beta: Option<f64>,
    pub c_batch: Option<f64>,
    pub c_epochs: Option<f64>,
    /// Force kappa (e.g. 0 for an i.i.d.-style check of the Markov constants).
    pub kappa_override: Option<f64>,
    /// Horizon for the mixing fit (default 64).
    pub mixing_t_max: Option<usize>,
}

/// Optional variance-study settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSpec {
    /// Monte-Carlo samples per recorded step.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

fn default_n_mc() -> usize {
    500
}

/// Top-level experiment configuration (TOML; unknown keys rejected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub algorithms: Vec<AlgoSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Record a trace point every this many pseudo-gradient evaluations.
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Number of grid points for percentile envelopes.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Output directory (overridable with --out).
    pub out_dir: Option<String>,
    pub conditions: Option<ConditionsSpec>,
    pub variance: Option<VarianceSpec>,
}

fn default_repetitions() -> usize {
    1
}
fn default_record_every() -> u64 {
    10
}
fn default_grid_points() -> usize {
    200
}

/// Parse and validate a TOML configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::ParseError(e.to_string()))?;
    validate(&config)?;
    Ok(config)
}

/// Collect every violation into one ValidationError.
fn validate(config: &ExperimentConfig) -> Result<()> {
    let mut problems = Vec::new();
    if config.repetitions == 0 {
        problems.push("repetitions must be >= 1".to_string());
    }
    let inst = &config.instance;
    match inst.kind.as_str() {
        "garnet" => {
            for (field, present) in [
                ("n_states", inst.n_states.is_some()),
                ("n_actions", inst.n_actions.is_some()),
                ("branching", inst.branching.is_some()),
                ("d", inst.d.is_some()),
                ("gamma", inst.gamma.is_some()),
            ] {
                if !present {
                    problems.push(format!("garnet instance requires `{field}`"));
                }
            }
        }
        "frozen_lake" => {
            if inst.d.is_none() {
                problems.push("frozen_lake instance requires `d`".to_string());
            }
            if inst.gamma.is_none() {
                problems.push("frozen_lake instance requires `gamma`".to_string());
            }
        }
        "cycle2" => {}
        "file" => match &inst.path {
            None => problems.push("file instance requires `path`".to_string()),
            Some(p) => {
                if !Path::new(p).exists() {
                    problems.push(format!("model file `{p}` does not exist"));
                }
            }
        },
        other => problems.push(format!(
            "unknown instance kind `{other}` (expected garnet, frozen_lake, cycle2, or file)"
        )),
    }
    if let Some(g) = inst.gamma {
        if !(0.0..1.0).contains(&g) {
            problems.push(format!("gamma {g} outside [0, 1)"));
        }
    }
    if inst.safety < 1.0 {
        problems.push(format!("safety factor {} must be >= 1", inst.safety));
    }
    for (kind, name) in [("target", &inst.target), ("behavior", &inst.behavior)] {
        if name != "random" && name != "uniform" {
            problems.push(format!("{kind} policy `{name}` (expected random or uniform)"));
        }
    }
    for algo in &config.algorithms {
        if lookup(&algo.name).is_none() {
            problems.push(format!("unknown algorithm `{}`", algo.name));
        }
        if algo.alpha <= 0.0 || algo.beta <= 0.0 {
            problems.push(format!("algorithm `{}`: step sizes must be positive", algo.name));
        }
        if algo.batch_size == 0 || algo.epochs == 0 {
            problems.push(format!(
                "algorithm `{}`: batch_size and epochs must be >= 1",
                algo.name
            ));
        }
    }
    if let Some(c) = &config.conditions {
        if let Some(eps) = c.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                problems.push(format!("conditions.epsilon {eps} outside (0, 1)"));
            }
        }
    }
    if let Some(v) = &config.variance {
        if v.n_mc < 2 {
            problems.push("variance.n_mc must be >= 2".to_string());
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::ValidationError(problems.join("; ")))
    }
}

/// Build the configured instance (model + policies + features + moments).
pub fn build_instance(config: &ExperimentConfig) -> Result<Instance> {
    let spec = &config.instance;
    let (model, features, id) = match spec.kind.as_str() {
        "garnet" => {
            let (model, features) = generate_garnet(
                spec.n_states.unwrap(),
                spec.n_actions.unwrap(),
                spec.branching.unwrap(),
                spec.d.unwrap(),
                spec.gamma.unwrap(),
                spec.seed,
            )?;
            (model, features, format!("garnet-{}", spec.seed))
        }
        "frozen_lake" => {
            let model = make_frozen_lake(spec.gamma.unwrap());
            let features = make_features_gaussian(model.n_states, spec.d.unwrap(), spec.seed);
            (model, features, format!("frozen_lake-{}", spec.seed))
        }
        "cycle2" => {
            let (model, features, target, behavior, _mu) = cycle2();
            return Instance::build("cycle2", model, features, target, behavior, spec.safety);
        }
        "file" => {
            let path = PathBuf::from(spec.path.as_ref().unwrap());
            let file = ModelFile::load(&path)?;
            let id = format!("file-{}", path.file_stem().unwrap_or_default().to_string_lossy());
            let (model, features) = file.into_parts();
            (model, features, id)
        }
        other => return Err(Error::ValidationError(format!("unknown instance kind `{other}`"))),
    };
    let policy = |name: &str, stream: u64| {
        let kind = if name == "random" { PolicyKind::Random } else { PolicyKind::Uniform };
        make_policy(kind, model.n_states, model.n_actions, derive_seed(spec.seed, stream))
    };
    let target = policy(&spec.target, 101);
    let behavior = policy(&spec.behavior, 102);
    Instance::build(&id, model, features, target, behavior, spec.safety)
}

// ---------------------------------------------------------------------------
// Deterministic text output
// ---------------------------------------------------------------------------

/// Render one float with 17 significant digits ('.' decimal).
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write lines with LF endings (creating parent directories as needed).
fn write_text(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn trace_csv(points: &[TracePoint]) -> Vec<String> {
    let mut lines = vec!["pg_count,conv_error,tracking_error_sq".to_string()];
    for p in points {
        lines.push(format!("{},{},{}", p.pg_count, fmt(p.conv_error), fmt(p.tracking_error_sq)));
    }
    lines
}

fn envelope_csv(env: &Envelope) -> Vec<String> {
    let mut lines = vec!["pg_count,p5,p50,p95".to_string()];
    for i in 0..env.grid.len() {
        lines.push(format!(
            "{},{},{},{}",
            env.grid[i],
            fmt(env.p5[i]),
            fmt(env.p50[i]),
            fmt(env.p95[i])
        ));
    }
    lines
}

/// FNV-1a hash of a byte string, as a hex literal (instance fingerprint).
fn fnv1a(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Stable fingerprint of the instance's model + features.
pub fn instance_hash(inst: &Instance) -> String {
    let file = ModelFile::from_parts(&inst.model, &inst.features, &inst.id);
    let json = serde_json::to_string(&file).expect("model serialization cannot fail");
    fnv1a(json.as_bytes())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Resolve the output directory: --out flag beats the config value.
pub fn resolve_out_dir(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = out_flag {
        return Ok(p.to_path_buf());
    }
    match &config.out_dir {
        Some(p) => Ok(PathBuf::from(p)),
        None => Err(Error::ValidationError(
            "no output directory: set `out_dir` in the config or pass --out".to_string(),
        )),
    }
}

/// Install a rayon pool of the requested width and run `body` inside it.
fn with_pool<T: Send>(threads: usize, body: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        return body();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
        .install(body)
}

/// `gen`: generate the configured model + features and write them as JSON.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let inst = build_instance(config)?;
    let path = if out.extension().is_some() {
        out.to_path_buf()
    } else {
        std::fs::create_dir_all(out)?;
        out.join("model.json")
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = ModelFile::from_parts(&inst.model, &inst.features, &inst.id);
    file.save(&path)?;
    Ok(path)
}

/// Per-repetition outcome recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub algo: String,
    pub rep: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
}

/// Run manifest: everything needed to reconstruct the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub instance_id: String,
    pub instance_hash: String,
    pub base_seed: u64,
    pub repetitions: usize,
    pub record_every: u64,
    /// Pseudo-gradient accounting convention used for the x-axis.
    pub pg_accounting: String,
    pub algorithms: Vec<AlgoSpec>,
    pub outcomes: Vec<RepOutcome>,
    pub wall_time_secs: f64,
}

fn algo_params(spec: &AlgoSpec, inst: &Instance, record_every: u64, seed: u64) -> AlgoParams {
    let kind = lookup(&spec.name).expect("validated").kind();
    AlgoParams {
        algo: kind,
        alpha: spec.alpha,
        beta: spec.beta,
        batch_size: spec.batch_size,
        epochs: spec.epochs,
        radii: inst.radii,
        seed,
        sampling: spec.sampling,
        record_every,
    }
}

/// `run`: execute the algorithm grid over seeded repetitions and write
/// per-repetition trace CSVs, per-algorithm envelope CSVs, and a manifest.
pub fn cmd_run(
    config: &ExperimentConfig,
    out: &Path,
    threads: usize,
    seed_override: Option<u64>,
) -> Result<()> {
    let started = std::time::Instant::now();
    let inst = build_instance(config)?;
    let base_seed = seed_override.unwrap_or(config.base_seed);
    std::fs::create_dir_all(out)?;

    let mut outcomes = Vec::new();
    for (ai, spec) in config.algorithms.iter().enumerate() {
        let algo = lookup(&spec.name).expect("validated");
        // Repetitions are the unit of parallelism; indexed map + collect
        // keeps the aggregate order independent of scheduling.
        let results: Vec<(usize, Result<RunTrace>)> = with_pool(threads, || {
            (0..config.repetitions)
                .into_par_iter()
                .map(|rep| {
                    let seed = derive_seed(base_seed, (ai as u64) << 32 | rep as u64);
                    let params = algo_params(spec, &inst, config.record_every, seed);
                    let mut obs = crate::algorithms::NoObserver;
                    (rep, algo.run(&inst, &params, &mut obs))
                })
                .collect()
        });

        let mut traces = Vec::new();
        for (rep, result) in results {
            let seed = derive_seed(base_seed, (ai as u64) << 32 | rep as u64);
            match result {
                Ok(trace) => {
                    let path = out.join(format!("{}_rep{rep:03}.csv", spec.name));
                    write_text(&path, &trace_csv(&trace.points))?;
                    outcomes.push(RepOutcome {
                        algo: spec.name.clone(),
                        rep,
                        seed,
                        ok: true,
                        error: None,
                    });
                    traces.push(trace);
                }
                Err(e) => outcomes.push(RepOutcome {
                    algo: spec.name.clone(),
                    rep,
                    seed,
                    ok: false,
                    error: Some(e.to_string()),
                }),
            }
        }
        if !traces.is_empty() {
            let grid = default_grid(&traces, config.grid_points);
            let conv = aggregate_envelope(&traces, &grid, |p| p.conv_error)?;
            write_text(
                &out.join(format!("{}_conv_error_envelope.csv", spec.name)),
                &envelope_csv(&conv),
            )?;
            let track = aggregate_envelope(&traces, &grid, |p| p.tracking_error_sq)?;
            write_text(
                &out.join(format!("{}_tracking_error_sq_envelope.csv", spec.name)),
                &envelope_csv(&track),
            )?;
        }
    }

    let manifest = Manifest {
        instance_id: inst.id.clone(),
        instance_hash: instance_hash(&inst),
        base_seed,
        repetitions: config.repetitions,
        record_every: config.record_every,
        pg_accounting: "1 per G evaluation and 1 per H evaluation; batches count every sample"
            .to_string(),
        algorithms: config.algorithms.clone(),
        outcomes,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(out.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Everything the `conditions` subcommand reports.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionsOutput {
    pub instance_id: String,
    pub setting: Setting,
    pub spectral: crate::stats::SpectralConstants,
    pub radii: crate::stats::Radii,
    pub vr_bounds: VRBounds,
    pub constants: serde_json::Value,
    /// Direct check of explicit or epsilon-scheduled (alpha, beta, M).
    pub report: Option<ConditionReport>,
    /// Exhaustive search outcome when no explicit point was given.
    pub search: Option<SearchResult>,
}

/// `conditions`: evaluate the step-size conditions (explicit point,
/// epsilon schedule, or exhaustive search) and write a JSON report.
pub fn cmd_conditions(config: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let spec = config.conditions.as_ref().ok_or_else(|| {
        Error::ValidationError("config has no [conditions] section".to_string())
    })?;
    let inst = build_instance(config)?;
    let gamma = inst.model.gamma;

    let consts = match spec.setting {
        Setting::Iid => Constants::Iid(constants_iid(&inst.spectral, &inst.radii, gamma)),
        Setting::Markov => {
            let mut mixing = inst.mixing(spec.mixing_t_max.unwrap_or(64))?;
            if let Some(kappa) = spec.kappa_override {
                mixing.kappa = kappa;
            }
            Constants::Markov(constants_markov(&inst.spectral, &inst.radii, gamma, &mixing)?)
        }
    };
    let constants_json = match &consts {
        Constants::Iid(c) => serde_json::to_value(c).expect("constants serialization"),
        Constants::Markov(c) => serde_json::to_value(c).expect("constants serialization"),
    };

    let (report, search) = if let (Some(alpha), Some(beta), Some(m)) =
        (spec.alpha, spec.beta, spec.batch_size)
    {
        (Some(check_conditions(&consts, alpha, beta, m)), None)
    } else if let Some(eps) = spec.epsilon {
        let coeffs = ScheduleCoefficients {
            c_alpha: spec.c_alpha.unwrap_or(1.0),
            c_beta: spec.c_beta.unwrap_or(1.0),
            c_batch: spec.c_batch.unwrap_or(1.0),
            c_epochs: spec.c_epochs.unwrap_or(1.0),
        };
        let schedule = crate::theory::schedule_from_epsilon(spec.setting, eps, &coeffs)?;
        (
            Some(check_conditions(&consts, schedule.alpha, schedule.beta, schedule.batch_size)),
            None,
        )
    } else {
        (None, epsilon_search(spec.setting, &consts))
    };

    let output = ConditionsOutput {
        instance_id: inst.id.clone(),
        setting: spec.setting,
        spectral: inst.spectral,
        radii: inst.radii,
        vr_bounds: vr_bounds(
            inst.radii.r_theta,
            inst.spectral.r_max,
            inst.spectral.rho_max,
            gamma,
            inst.spectral.min_abs_eig_c,
        ),
        constants: constants_json,
        report,
        search,
    };

    std::fs::create_dir_all(out)?;
    let path = out.join("conditions.json");
    let json = serde_json::to_string_pretty(&output).expect("report serialization");
    std::fs::write(&path, json + "\n")?;
    Ok(path)
}

/// Observer that estimates per-step update variance at every recorded step
/// with fresh i.i.d. samples that never touch algorithm state.
struct VarianceObserver<'a> {
    inst: &'a Instance,
    sampler: IidSampler,
    n_mc: usize,
    rows: Vec<(u64, f64, f64)>,
}

impl RunObserver for VarianceObserver<'_> {
    fn on_record(&mut self, pg_count: u64, snapshot: &UpdateSnapshot) {
        let inst = self.inst;
        let sampler = &mut self.sampler;
        let estimate =
            mc_update_variance(snapshot, || inst.stats_of(&sampler.next_transition()), self.n_mc);
        self.rows.push((pg_count, estimate.var_theta_update, estimate.var_w_update));
    }
}

/// `variance`: run each configured algorithm once and write per-recorded-step
/// Monte-Carlo update variances (one CSV per algorithm).
pub fn cmd_variance(
    config: &ExperimentConfig,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<()> {
    let n_mc = config.variance.as_ref().map_or_else(default_n_mc, |v| v.n_mc);
    let inst = build_instance(config)?;
    let base_seed = seed_override.unwrap_or(config.base_seed);
    std::fs::create_dir_all(out)?;

    for (ai, spec) in config.algorithms.iter().enumerate() {
        let algo = lookup(&spec.name).expect("validated");
        let seed = derive_seed(base_seed, (ai as u64) << 32);
        let params = algo_params(spec, &inst, config.record_every, seed);
        let mut obs = VarianceObserver {
            inst: &inst,
            // Separate stream so variance probes never alias run samples.
            sampler: IidSampler::new(
                inst.model.clone(),
                inst.behavior.clone(),
                inst.mu.clone(),
                derive_seed(seed, 0x7a5),
            ),
            n_mc,
            rows: Vec::new(),
        };
        algo.run(&inst, &params, &mut obs)?;
        let mut lines = vec!["pg_count,var_theta_update,var_w_update".to_string()];
        for (pg, vt, vw) in &obs.rows {
            lines.push(format!("{},{},{}", pg, fmt(*vt), fmt(*vw)));
        }
        write_text(&out.join(format!("variance_{}.csv", spec.name)), &lines)?;
    }
    Ok(())
}

/// Convenience: run one algorithm spec for `reps` repetitions (serial),
/// returning the traces. Used by tests and the acceptance suite.
pub fn run_reps(
    inst: &Instance,
    spec: &AlgoSpec,
    record_every: u64,
    base_seed: u64,
    reps: usize,
) -> Result<Vec<RunTrace>> {
    let algo = lookup(&spec.name)
        .ok_or_else(|| Error::ValidationError(format!("unknown algorithm `{}`", spec.name)))?;
    (0..reps)
        .map(|rep| {
            let params =
                algo_params(spec, inst, record_every, derive_seed(base_seed, rep as u64));
            let mut obs = crate::algorithms::NoObserver;
            algo.run(inst, &params, &mut obs)
        })
        .collect()
}
