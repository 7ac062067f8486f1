//! Projection, pseudo-gradients, and the training procedures: baseline
//! TD/TDC, variance-reduced TD, and variance-reduced TDC for i.i.d. and
//! Markovian samples.
//!
//! Each variant implements the [`Algorithm`] trait and is registered by
//! name in [`registry`], so the harness selects strategies at runtime from
//! configuration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{RunTrace, TraceMeta, TracePoint};
use crate::env::{sample_trajectory, IidSampler, Start, Transition};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::numerics::{axpy, norm, scale, Vector};
use crate::stats::{Radii, SampleStats};

/// Algorithm variants, as named in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    Td,
    Tdc,
    Vrtd,
    VrtdcIid,
    VrtdcMarkov,
}

impl AlgoKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgoKind::Td => "td",
            AlgoKind::Tdc => "tdc",
            AlgoKind::Vrtd => "vrtd",
            AlgoKind::VrtdcIid => "vrtdc_iid",
            AlgoKind::VrtdcMarkov => "vrtdc_markov",
        }
    }
}

/// How non-SVRG algorithms draw their samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Iid,
    Markov,
}

/// Algorithm configuration: step sizes, epoch geometry, radii, and seed.
#[derive(Debug, Clone)]
pub struct AlgoParams {
    pub algo: AlgoKind,
    /// theta time-scale step size.
    pub alpha: f64,
    /// w time-scale step size.
    pub beta: f64,
    /// Batch / epoch length M.
    pub batch_size: usize,
    /// Number of epochs m (for baselines, total steps = epochs * M).
    pub epochs: usize,
    pub radii: Radii,
    pub seed: u64,
    /// Sample regime for TD / TDC / VRTD; the VRTDC variants fix their own.
    pub sampling: Sampling,
    /// Record a trace point every this many pseudo-gradient evaluations.
    pub record_every: u64,
}

impl AlgoParams {
    fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidParams("step sizes must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidParams("batch size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evolving iterates (theta, w), kept inside their projection balls.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub theta: Vector,
    pub w: Vector,
}

/// Per-epoch anchor output.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub theta_tilde: Vector,
    pub w_tilde: Vector,
    pub pseudo_gradient_count: u64,
}

/// Euclidean-ball projection: v unchanged if ||v|| <= R, else v R / ||v||.
pub fn project(v: &[f64], r: f64) -> Vector {
    assert!(r > 0.0, "projection radius must be positive");
    let n = norm(v);
    if n <= r {
        v.to_vec()
    } else {
        scale(v, r / n)
    }
}

/// Pseudo-gradients of one sample:
/// G = A_x theta + b_x + B_x w, H = A_x theta + b_x + C_x w.
pub fn pseudo_gradients(s: &SampleStats, theta: &[f64], w: &[f64]) -> (Vector, Vector) {
    let a_theta_b = axpy(&s.a.mul_vec(theta), 1.0, &s.b);
    let g = axpy(&a_theta_b, 1.0, &s.big_b.mul_vec(w));
    let h = axpy(&a_theta_b, 1.0, &s.c.mul_vec(w));
    (g, h)
}

/// Snapshot of everything needed to evaluate an algorithm's update
/// direction on a fresh sample (used by Monte-Carlo variance estimation).
#[derive(Debug, Clone)]
pub struct UpdateSnapshot {
    pub theta: Vector,
    pub w: Vector,
    /// Present for the SVRG variants; absent means the plain update.
    pub svrg: Option<SvrgAnchors>,
    /// VRTD applies variance reduction to theta only.
    pub theta_only: bool,
}

/// SVRG anchor state: reference point and batch pseudo-gradients.
#[derive(Debug, Clone)]
pub struct SvrgAnchors {
    pub theta_tilde: Vector,
    pub w_tilde: Vector,
    pub g_tilde: Vector,
    pub h_tilde: Vector,
}

impl UpdateSnapshot {
    /// The (theta, w) update directions this algorithm would apply for the
    /// given sample (before step sizes and projection).
    pub fn update_directions(&self, s: &SampleStats) -> (Vector, Vector) {
        match &self.svrg {
            None => pseudo_gradients(s, &self.theta, &self.w),
            Some(anchors) => {
                let (g, h) = pseudo_gradients(s, &self.theta, &self.w);
                let (g_anchor, h_anchor) =
                    pseudo_gradients(s, &anchors.theta_tilde, &anchors.w_tilde);
                let u_theta: Vector = g
                    .iter()
                    .zip(&g_anchor)
                    .zip(&anchors.g_tilde)
                    .map(|((gi, gai), gti)| gi - gai + gti)
                    .collect();
                let u_w: Vector = if self.theta_only {
                    vec![0.0; h.len()]
                } else {
                    h.iter()
                        .zip(&h_anchor)
                        .zip(&anchors.h_tilde)
                        .map(|((hi, hai), hti)| hi - hai + hti)
                        .collect()
                };
                (u_theta, u_w)
            }
        }
    }
}

/// Observer hook invoked at every recorded step; lets the harness estimate
/// update variance without entangling it with the run loop.
pub trait RunObserver {
    fn on_record(&mut self, _pg_count: u64, _snapshot: &UpdateSnapshot) {}
}

/// No-op observer.
pub struct NoObserver;
impl RunObserver for NoObserver {}

/// A strategy in the registry: one algorithm variant, runnable by name.
pub trait Algorithm: Sync {
    fn kind(&self) -> AlgoKind;
    fn name(&self) -> &'static str {
        self.kind().name()
    }
    /// Execute one seeded run on an instance.
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace>;
}

struct Td;
struct Tdc;
struct Vrtd;
struct VrtdcIid;
struct VrtdcMarkov;

static TD: Td = Td;
static TDC: Tdc = Tdc;
static VRTD: Vrtd = Vrtd;
static VRTDC_IID: VrtdcIid = VrtdcIid;
static VRTDC_MARKOV: VrtdcMarkov = VrtdcMarkov;

/// All registered algorithm strategies.
pub fn registry() -> [&'static dyn Algorithm; 5] {
    [&TD, &TDC, &VRTD, &VRTDC_IID, &VRTDC_MARKOV]
}

/// Look a strategy up by its configuration name.
pub fn lookup(name: &str) -> Option<&'static dyn Algorithm> {
    registry().into_iter().find(|a| a.name() == name)
}

/// Strategy for the given kind.
pub fn strategy(kind: AlgoKind) -> &'static dyn Algorithm {
    lookup(kind.name()).expect("every kind is registered")
}

// ---------------------------------------------------------------------------
// Shared run machinery
// ---------------------------------------------------------------------------

/// Source of transitions for a run.
enum SampleSource {
    Iid(IidSampler),
    Trajectory { samples: Vec<Transition>, pos: usize },
}

impl SampleSource {
    fn next_transition(&mut self) -> Transition {
        match self {
            SampleSource::Iid(sampler) => sampler.next_transition(),
            SampleSource::Trajectory { samples, pos } => {
                let x = samples[*pos];
                *pos += 1;
                x
            }
        }
    }
}

fn make_source(inst: &Instance, params: &AlgoParams, total: usize) -> Result<SampleSource> {
    match params.sampling {
        Sampling::Iid => Ok(SampleSource::Iid(IidSampler::new(
            inst.model.clone(),
            inst.behavior.clone(),
            inst.mu.clone(),
            params.seed,
        ))),
        Sampling::Markov => {
            let samples = sample_trajectory(
                &inst.model,
                &inst.behavior,
                total,
                params.seed,
                Start::Stationary,
            )?;
            Ok(SampleSource::Trajectory { samples, pos: 0 })
        }
    }
}

/// Book-keeping shared by every run loop: pseudo-gradient counting, trace
/// recording, and the worst observed update norms.
struct Recorder<'a> {
    inst: &'a Instance,
    record_every: u64,
    pg_count: u64,
    next_record: u64,
    points: Vec<TracePoint>,
    epochs: Vec<EpochRecord>,
    max_theta_update: f64,
    max_w_update: f64,
    anchor_gap_max: f64,
    observer: &'a mut dyn RunObserver,
}

impl<'a> Recorder<'a> {
    fn new(inst: &'a Instance, record_every: u64, observer: &'a mut dyn RunObserver) -> Self {
        Recorder {
            inst,
            record_every: record_every.max(1),
            pg_count: 0,
            next_record: 0,
            points: Vec::new(),
            epochs: Vec::new(),
            max_theta_update: 0.0,
            max_w_update: 0.0,
            anchor_gap_max: 0.0,
            observer,
        }
    }

    fn count(&mut self, evals: u64) {
        self.pg_count += evals;
    }

    fn note_updates(&mut self, u_theta: &[f64], u_w: Option<&[f64]>) {
        self.max_theta_update = self.max_theta_update.max(norm(u_theta));
        if let Some(u) = u_w {
            self.max_w_update = self.max_w_update.max(norm(u));
        }
    }

    /// Record a trace point if the count has crossed the next boundary.
    fn maybe_record(&mut self, state: &IterateState, snapshot: impl Fn() -> UpdateSnapshot) {
        if self.pg_count >= self.next_record {
            self.record(state, &snapshot());
            while self.next_record <= self.pg_count {
                self.next_record += self.record_every;
            }
        }
    }

    fn record(&mut self, state: &IterateState, snapshot: &UpdateSnapshot) {
        let conv = crate::diagnostics::convergence_error(&state.theta, &self.inst.moments.theta_star);
        let track = crate::diagnostics::tracking_error_sq(&state.theta, &state.w, &self.inst.moments)
            .expect("C is non-singular on a valid instance");
        self.points.push(TracePoint {
            pg_count: self.pg_count,
            conv_error: conv,
            tracking_error_sq: track,
        });
        self.observer.on_record(self.pg_count, snapshot);
    }

    fn finish(self, params: &AlgoParams, inst: &Instance) -> RunTrace {
        RunTrace {
            points: self.points,
            epochs: self.epochs,
            max_theta_update: self.max_theta_update,
            max_w_update: self.max_w_update,
            anchor_gap_max: self.anchor_gap_max,
            meta: TraceMeta {
                algo: params.algo.name().to_string(),
                alpha: params.alpha,
                beta: params.beta,
                batch_size: params.batch_size,
                epochs: params.epochs,
                seed: params.seed,
                instance_id: inst.id.clone(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Run the TD or TDC recursion for `epochs * batch_size` steps.
fn run_plain(
    with_correction: bool,
    inst: &Instance,
    params: &AlgoParams,
    observer: &mut dyn RunObserver,
) -> Result<RunTrace> {
    params.validate()?;
    let total = params.epochs * params.batch_size;
    let mut source = make_source(inst, params, total)?;
    let d = inst.features.d;
    let mut state = IterateState { theta: vec![0.0; d], w: vec![0.0; d] };
    let mut rec = Recorder::new(inst, params.record_every, observer);

    let snapshot = |state: &IterateState| UpdateSnapshot {
        theta: state.theta.clone(),
        w: state.w.clone(),
        svrg: None,
        theta_only: !with_correction,
    };
    rec.maybe_record(&state, || snapshot(&state));
    for _ in 0..total {
        let x = source.next_transition();
        let s = inst.stats_of(&x);
        if with_correction {
            // TDC: both time-scales, evaluated at the current iterates.
            let (g, h) = pseudo_gradients(&s, &state.theta, &state.w);
            rec.count(2);
            rec.note_updates(&g, Some(&h));
            state.theta = project(&axpy(&state.theta, params.alpha, &g), params.radii.r_theta);
            state.w = project(&axpy(&state.w, params.beta, &h), params.radii.r_w);
        } else {
            // TD: importance-weighted one time-scale update, w frozen at 0.
            let (g, _) = pseudo_gradients(&s, &state.theta, &state.w);
            rec.count(1);
            rec.note_updates(&g, None);
            state.theta = project(&axpy(&state.theta, params.alpha, &g), params.radii.r_theta);
        }
        rec.maybe_record(&state, || snapshot(&state));
    }
    Ok(rec.finish(params, inst))
}

impl Algorithm for Td {
    fn kind(&self) -> AlgoKind {
        AlgoKind::Td
    }
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace> {
        run_plain(false, inst, params, observer)
    }
}

impl Algorithm for Tdc {
    fn kind(&self) -> AlgoKind {
        AlgoKind::Tdc
    }
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace> {
        run_plain(true, inst, params, observer)
    }
}

// ---------------------------------------------------------------------------
// SVRG variants
// ---------------------------------------------------------------------------

/// How an SVRG epoch obtains its batch and its inner samples.
enum EpochSampling {
    /// Fresh i.i.d. draws for both the batch and every inner step.
    FreshIid,
    /// Consecutive trajectory slice as the batch; inner samples drawn
    /// uniformly with replacement from that batch.
    BatchReuse,
}

/// Shared SVRG loop for VRTD (theta only) and VRTDC (two time-scales).
fn run_svrg(
    theta_only: bool,
    epoch_sampling: EpochSampling,
    inst: &Instance,
    params: &AlgoParams,
    observer: &mut dyn RunObserver,
) -> Result<RunTrace> {
    params.validate()?;
    let d = inst.features.d;
    let m_batch = params.batch_size;
    let total = params.epochs * m_batch;

    // Sample acquisition: BatchReuse consumes one trajectory slice per epoch
    // (so the trajectory must cover epochs * M transitions); FreshIid draws
    // 2M fresh samples per epoch (M batch + M inner).
    let mut source = match epoch_sampling {
        EpochSampling::FreshIid => make_source(
            inst,
            &AlgoParams { sampling: Sampling::Iid, ..params.clone() },
            0,
        )?,
        EpochSampling::BatchReuse => {
            let src = make_source(
                inst,
                &AlgoParams { sampling: params.sampling, ..params.clone() },
                total,
            )?;
            if let SampleSource::Trajectory { samples, .. } = &src {
                if samples.len() < total {
                    return Err(Error::TrajectoryTooShort {
                        needed: total,
                        got: samples.len(),
                    });
                }
            }
            src
        }
    };
    // Separate stream for the uniform with-replacement inner draws.
    let mut inner_rng = crate::env::stream_rng(params.seed, 5);

    let mut anchors = IterateState { theta: vec![0.0; d], w: vec![0.0; d] };
    let mut rec = Recorder::new(inst, params.record_every, observer);

    let initial_state = anchors.clone();
    rec.maybe_record(&initial_state, || UpdateSnapshot {
        theta: initial_state.theta.clone(),
        w: initial_state.w.clone(),
        svrg: None,
        theta_only,
    });

    for _epoch in 0..params.epochs {
        // Batch pseudo-gradients at the anchors.
        let batch: Vec<SampleStats> = (0..m_batch)
            .map(|_| inst.stats_of(&source.next_transition()))
            .collect();
        let mut g_tilde = vec![0.0; d];
        let mut h_tilde = vec![0.0; d];
        for s in &batch {
            let (g, h) = pseudo_gradients(s, &anchors.theta, &anchors.w);
            for i in 0..d {
                g_tilde[i] += g[i];
                h_tilde[i] += h[i];
            }
        }
        for i in 0..d {
            g_tilde[i] /= m_batch as f64;
            h_tilde[i] /= m_batch as f64;
        }
        // Evaluation accounting: one G (and one H unless theta-only) per
        // batch sample.
        rec.count(if theta_only { m_batch as u64 } else { 2 * m_batch as u64 });

        let svrg_anchors = SvrgAnchors {
            theta_tilde: anchors.theta.clone(),
            w_tilde: anchors.w.clone(),
            g_tilde: g_tilde.clone(),
            h_tilde: h_tilde.clone(),
        };

        // SVRG anchor identity: the corrected update at the anchor point is
        // exactly the batch pseudo-gradient (per-sample terms cancel).
        {
            let probe = batch[0].clone();
            let snap = UpdateSnapshot {
                theta: anchors.theta.clone(),
                w: anchors.w.clone(),
                svrg: Some(svrg_anchors.clone()),
                theta_only,
            };
            let (u_theta, u_w) = snap.update_directions(&probe);
            let gap_theta = norm(&crate::numerics::sub(&u_theta, &g_tilde));
            let gap_w = if theta_only { 0.0 } else { norm(&crate::numerics::sub(&u_w, &h_tilde)) };
            rec.anchor_gap_max = rec.anchor_gap_max.max(gap_theta).max(gap_w);
        }

        // Inner loop.
        let mut state = anchors.clone();
        let mut sum_theta = vec![0.0; d];
        let mut sum_w = vec![0.0; d];
        for _t in 0..m_batch {
            for i in 0..d {
                sum_theta[i] += state.theta[i];
                sum_w[i] += state.w[i];
            }
            let s = match epoch_sampling {
                EpochSampling::FreshIid => inst.stats_of(&source.next_transition()),
                EpochSampling::BatchReuse => {
                    let idx = (inner_rng.gen_range(0..m_batch as u64)) as usize;
                    batch[idx].clone()
                }
            };
            let (g, h) = pseudo_gradients(&s, &state.theta, &state.w);
            let (g_anchor, h_anchor) = pseudo_gradients(&s, &anchors.theta, &anchors.w);
            rec.count(if theta_only { 2 } else { 4 });

            let u_theta: Vector = g
                .iter()
                .zip(&g_anchor)
                .zip(&g_tilde)
                .map(|((gi, gai), gti)| gi - gai + gti)
                .collect();
            let new_theta =
                project(&axpy(&state.theta, params.alpha, &u_theta), params.radii.r_theta);
            if theta_only {
                rec.note_updates(&u_theta, None);
            } else {
                let u_w: Vector = h
                    .iter()
                    .zip(&h_anchor)
                    .zip(&h_tilde)
                    .map(|((hi, hai), hti)| hi - hai + hti)
                    .collect();
                rec.note_updates(&u_theta, Some(&u_w));
                state.w = project(&axpy(&state.w, params.beta, &u_w), params.radii.r_w);
            }
            state.theta = new_theta;

            let snap_state = state.clone();
            let snap_anchors = svrg_anchors.clone();
            rec.maybe_record(&state, move || UpdateSnapshot {
                theta: snap_state.theta.clone(),
                w: snap_state.w.clone(),
                svrg: Some(snap_anchors.clone()),
                theta_only,
            });
        }

        // New anchors: averages of the M inner iterates theta_0..theta_{M-1}.
        anchors = IterateState {
            theta: scale(&sum_theta, 1.0 / m_batch as f64),
            w: scale(&sum_w, 1.0 / m_batch as f64),
        };
        rec.epochs.push(EpochRecord {
            theta_tilde: anchors.theta.clone(),
            w_tilde: anchors.w.clone(),
            pseudo_gradient_count: rec.pg_count,
        });
    }

    Ok(rec.finish(params, inst))
}

impl Algorithm for Vrtd {
    fn kind(&self) -> AlgoKind {
        AlgoKind::Vrtd
    }
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace> {
        // Markovian sampling reuses the epoch batch for inner draws exactly
        // as the two time-scale Markovian variant does.
        let epoch_sampling = match params.sampling {
            Sampling::Iid => EpochSampling::FreshIid,
            Sampling::Markov => EpochSampling::BatchReuse,
        };
        run_svrg(true, epoch_sampling, inst, params, observer)
    }
}

impl Algorithm for VrtdcIid {
    fn kind(&self) -> AlgoKind {
        AlgoKind::VrtdcIid
    }
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace> {
        run_svrg(false, EpochSampling::FreshIid, inst, params, observer)
    }
}

impl Algorithm for VrtdcMarkov {
    fn kind(&self) -> AlgoKind {
        AlgoKind::VrtdcMarkov
    }
    fn run(
        &self,
        inst: &Instance,
        params: &AlgoParams,
        observer: &mut dyn RunObserver,
    ) -> Result<RunTrace> {
        let params = AlgoParams { sampling: Sampling::Markov, ..params.clone() };
        run_svrg(false, EpochSampling::BatchReuse, inst, &params, observer)
    }
}
