//! End-to-end acceptance suite: one test per shipped guarantee, each
//! asserting its stated tolerance and printing a single PASS line.

use std::time::Instant;

use tdlab::algorithms::{lookup, AlgoParams, RunObserver, Sampling, UpdateSnapshot};
use tdlab::diagnostics::{mc_update_variance, tracking_error_sq, RunTrace};
use tdlab::env::{
    cycle2, derive_seed, generate_garnet, make_policy, sample_iid, sample_trajectory, IidSampler,
    PolicyKind, Start,
};
use tdlab::harness::{cmd_run, parse_config, run_reps, AlgoSpec};
use tdlab::instance::Instance;
use tdlab::numerics::{norm, norm_inf, spectral_norm, sub, Matrix};
use tdlab::theory::{constants_iid, constants_markov, epsilon_search, vr_bounds, Constants, Setting};

fn cycle2_instance() -> Instance {
    let (model, features, target, behavior, _) = cycle2();
    Instance::build("cycle2", model, features, target, behavior, 1.0).unwrap()
}

/// The standing small random-MDP configuration used across criteria:
/// 20 states, 4 actions, branching 3, 5 features, gamma 0.9, uniform
/// behavior policy, random target policy.
fn garnet_instance(seed: u64) -> Instance {
    let (model, features) = generate_garnet(20, 4, 3, 5, 0.9, seed).unwrap();
    let target = make_policy(PolicyKind::Random, 20, 4, derive_seed(seed, 101));
    let behavior = make_policy(PolicyKind::Uniform, 20, 4, derive_seed(seed, 102));
    Instance::build(&format!("garnet-{seed}"), model, features, target, behavior, 1.0).unwrap()
}

fn assert_matrix_close(m: &Matrix, expected: &[&[f64]], tol: f64, label: &str) {
    for (i, row) in expected.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            assert!(
                (m.at(i, j) - e).abs() <= tol,
                "{label}[{i}][{j}] = {} but expected {e}",
                m.at(i, j)
            );
        }
    }
}

fn lower_median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

fn mean_of_final_tenth(values: &[f64]) -> f64 {
    let start = (values.len() as f64 * 0.9).ceil() as usize;
    let tail = &values[start.min(values.len() - 1)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[test]
fn criterion_01_two_state_ground_truth() {
    let started = Instant::now();
    let inst = cycle2_instance();
    let m = &inst.moments;
    let tol = 1e-10;

    assert_matrix_close(&m.a, &[&[-0.5, 0.25], &[0.25, -0.5]], tol, "A");
    assert!((m.b[0] - 0.5).abs() <= tol && (m.b[1] - 0.5).abs() <= tol);
    assert_matrix_close(&m.big_b, &[&[0.0, -0.25], &[-0.25, 0.0]], tol, "B");
    assert_matrix_close(&m.c, &[&[-0.5, 0.0], &[0.0, -0.5]], tol, "C");
    assert!((m.theta_star[0] - 2.0).abs() <= tol && (m.theta_star[1] - 2.0).abs() <= tol);
    assert_matrix_close(&m.a_hat, &[&[-0.625, 0.5], &[0.5, -0.625]], tol, "A_hat");
    assert!((m.b_hat[0] - 0.25).abs() <= tol && (m.b_hat[1] - 0.25).abs() <= tol);

    let s = &inst.spectral;
    assert!((s.lambda_a_hat - 0.25).abs() <= tol);
    assert!((s.lambda_c - 1.0).abs() <= tol);
    assert!((s.min_abs_eig_c - 0.5).abs() <= tol);
    assert!((s.rho_max - 1.0).abs() <= tol);
    assert!((s.r_max - 1.0).abs() <= tol);

    let r_theta = 2.0 * 2.0_f64.sqrt();
    assert!((inst.radii.r_theta - r_theta).abs() <= tol);
    assert!((inst.radii.r_w - 3.0 * r_theta).abs() <= tol);

    assert!(started.elapsed().as_secs_f64() < 1.0, "ground-truth check exceeded 1s");
    println!("criterion 1 (two-state ground truth): PASS");
}

#[test]
fn criterion_02_fixed_point_residuals_on_100_instances() {
    for seed in 0..100u64 {
        let inst = garnet_instance(seed);
        let m = &inst.moments;
        let res: Vec<f64> = m
            .a
            .mul_vec(&m.theta_star)
            .iter()
            .zip(&m.b)
            .map(|(x, y)| x + y)
            .collect();
        assert!(
            norm_inf(&res) <= 1e-9,
            "||A theta* + b||_inf = {:e} on seed {seed}",
            norm_inf(&res)
        );
        let res_hat: Vec<f64> = m
            .a_hat
            .mul_vec(&m.theta_star)
            .iter()
            .zip(&m.b_hat)
            .map(|(x, y)| x + y)
            .collect();
        assert!(
            norm_inf(&res_hat) <= 1e-9,
            "||A_hat theta* + b_hat||_inf = {:e} on seed {seed}",
            norm_inf(&res_hat)
        );
    }
    println!("criterion 2 (fixed-point residuals on 100 instances): PASS");
}

#[test]
fn criterion_03_samplers_match_population() {
    let inst = garnet_instance(7);
    let d = inst.features.d;

    // I.i.d. sampler: the entrywise mean of A_x over 1e5 draws must sit
    // within 3 standard errors of the population A.
    let n = 100_000usize;
    let samples = sample_iid(&inst.model, &inst.behavior, &inst.mu, n, 123);
    let mut sum = vec![0.0; d * d];
    let mut sumsq = vec![0.0; d * d];
    for x in &samples {
        let s = inst.stats_of(x);
        for i in 0..d {
            for j in 0..d {
                let v = s.a.at(i, j);
                sum[i * d + j] += v;
                sumsq[i * d + j] += v * v;
            }
        }
    }
    let nf = n as f64;
    for i in 0..d {
        for j in 0..d {
            let mean = sum[i * d + j] / nf;
            let var = (sumsq[i * d + j] / nf - mean * mean).max(0.0);
            let se = (var / nf).sqrt();
            let gap = (mean - inst.moments.a.at(i, j)).abs();
            assert!(
                gap <= 3.0 * se + 1e-12,
                "A[{i}][{j}] off by {gap:e} with SE {se:e}"
            );
        }
    }

    // Markov sampler: the empirical state distribution over 1e6 steps must
    // be within 1% total variation of the stationary distribution.
    let steps = 1_000_000usize;
    let traj = sample_trajectory(&inst.model, &inst.behavior, steps, 9, Start::Stationary).unwrap();
    let mut counts = vec![0.0; inst.model.n_states];
    for x in &traj {
        counts[x.s] += 1.0;
    }
    let tv: f64 = counts
        .iter()
        .zip(&inst.mu)
        .map(|(c, mu)| (c / steps as f64 - mu).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.01, "empirical TV distance {tv} exceeds 1%");
    println!("criterion 3 (samplers match population): PASS");
}

#[test]
fn criterion_04_norm_and_update_bounds_never_violated() {
    let inst = garnet_instance(3);
    let gamma = inst.model.gamma;
    let rho_max = inst.spectral.rho_max;
    let r_max = inst.spectral.r_max;
    let tol = 1e-9;

    // Per-sample statistic bounds over 1e4 draws (unit-norm features):
    // ||A_x|| <= (1+gamma) rho_max, ||b_x|| <= rho_max r_max,
    // ||B_x|| <= gamma rho_max, ||C_x|| <= 1.
    let samples = sample_iid(&inst.model, &inst.behavior, &inst.mu, 10_000, 55);
    let mut violations = 0usize;
    for x in &samples {
        let s = inst.stats_of(x);
        if spectral_norm(&s.a) > (1.0 + gamma) * rho_max + tol
            || norm(&s.b) > rho_max * r_max + tol
            || spectral_norm(&s.big_b) > gamma * rho_max + tol
            || spectral_norm(&s.c) > 1.0 + tol
        {
            violations += 1;
        }
    }
    assert_eq!(violations, 0, "per-sample norm bound violations");

    // Update-norm bounds over 1e4 steps of every registered algorithm.
    let bounds = vr_bounds(
        inst.radii.r_theta,
        r_max,
        rho_max,
        gamma,
        inst.spectral.min_abs_eig_c,
    );
    for (name, sampling) in [
        ("td", Sampling::Iid),
        ("tdc", Sampling::Iid),
        ("vrtd", Sampling::Iid),
        ("vrtdc_iid", Sampling::Iid),
        ("vrtdc_markov", Sampling::Markov),
    ] {
        let spec = AlgoSpec {
            name: name.to_string(),
            alpha: 0.05,
            beta: 0.05,
            batch_size: 100,
            epochs: 100,
            sampling,
        };
        let trace = run_reps(&inst, &spec, 10, 17, 1).unwrap().pop().unwrap();
        assert!(
            trace.max_theta_update <= bounds.g_vr + tol,
            "{name}: theta update {} exceeds bound {}",
            trace.max_theta_update,
            bounds.g_vr
        );
        assert!(
            trace.max_w_update <= bounds.h_vr + tol,
            "{name}: w update {} exceeds bound {}",
            trace.max_w_update,
            bounds.h_vr
        );
    }
    println!("criterion 4 (norm and update bounds never violated): PASS");
}

#[test]
fn criterion_05_anchor_identity_every_epoch() {
    let inst = garnet_instance(3);
    for (name, sampling) in [
        ("vrtd", Sampling::Iid),
        ("vrtd", Sampling::Markov),
        ("vrtdc_iid", Sampling::Iid),
        ("vrtdc_markov", Sampling::Markov),
    ] {
        let spec = AlgoSpec {
            name: name.to_string(),
            alpha: 0.05,
            beta: 0.05,
            batch_size: 64,
            epochs: 10,
            sampling,
        };
        let trace = run_reps(&inst, &spec, 10, 21, 1).unwrap().pop().unwrap();
        assert_eq!(trace.epochs.len(), 10, "{name}: missing epoch records");
        assert!(
            trace.anchor_gap_max <= 1e-12,
            "{name} ({sampling:?}): anchor identity gap {:e}",
            trace.anchor_gap_max
        );
    }
    println!("criterion 5 (anchor identity every epoch): PASS");
}

fn run_criterion_06_cycle2() -> RunTrace {
    let inst = cycle2_instance();
    let spec = AlgoSpec {
        name: "vrtdc_iid".to_string(),
        alpha: 0.1,
        beta: 0.05,
        batch_size: 128,
        epochs: 40,
        sampling: Sampling::Iid,
    };
    run_reps(&inst, &spec, 10, 0, 1).unwrap().pop().unwrap()
}

#[test]
fn criterion_06_convergence_both_regimes() {
    let started = Instant::now();

    // I.i.d. regime on the two-state instance.
    let inst = cycle2_instance();
    let trace = run_criterion_06_cycle2();
    let anchor = trace.epochs.last().unwrap();
    let err = norm(&sub(&anchor.theta_tilde, &inst.moments.theta_star));
    assert!(err < 0.02, "final anchor error {err}");

    // Markov regime on the 20-state instance: the median (over 20 seeds)
    // final error must drop below 10% of the initial error.
    let garnet = garnet_instance(3);
    let spec = AlgoSpec {
        name: "vrtdc_markov".to_string(),
        alpha: 0.05,
        beta: 0.02,
        batch_size: 1000,
        epochs: 30,
        sampling: Sampling::Markov,
    };
    let traces = run_reps(&garnet, &spec, 10, 0, 20).unwrap();
    let mut initial: Vec<f64> = traces.iter().map(|t| t.points[0].conv_error).collect();
    let mut fin: Vec<f64> = traces.iter().map(|t| t.points.last().unwrap().conv_error).collect();
    let med_initial = lower_median(&mut initial);
    let med_final = lower_median(&mut fin);
    assert!(
        med_final < 0.1 * med_initial,
        "median error {med_final} not below 10% of initial {med_initial}"
    );

    assert!(started.elapsed().as_secs_f64() < 120.0, "convergence runs exceeded 2 minutes");
    println!("criterion 6 (convergence in both regimes): PASS");
}

/// Observer that estimates the per-step update variance at every recorded
/// step with fresh i.i.d. probe samples.
struct VarianceProbe<'a> {
    inst: &'a Instance,
    sampler: IidSampler,
    n_mc: usize,
    rows: Vec<(f64, f64)>,
}

impl RunObserver for VarianceProbe<'_> {
    fn on_record(&mut self, _pg_count: u64, snapshot: &UpdateSnapshot) {
        let inst = self.inst;
        let sampler = &mut self.sampler;
        let v = mc_update_variance(snapshot, || inst.stats_of(&sampler.next_transition()), self.n_mc);
        self.rows.push((v.var_theta_update, v.var_w_update));
    }
}

fn late_variances(inst: &Instance, name: &str, seed: u64) -> (f64, f64) {
    let algo = lookup(name).unwrap();
    let params = AlgoParams {
        algo: algo.kind(),
        alpha: 0.05,
        beta: 0.05,
        batch_size: 100,
        epochs: 20,
        radii: inst.radii,
        seed,
        sampling: Sampling::Iid,
        record_every: 20,
    };
    let mut probe = VarianceProbe {
        inst,
        sampler: IidSampler::new(
            inst.model.clone(),
            inst.behavior.clone(),
            inst.mu.clone(),
            derive_seed(seed, 0xabcd),
        ),
        n_mc: 500,
        rows: Vec::new(),
    };
    algo.run(inst, &params, &mut probe).unwrap();
    let thetas: Vec<f64> = probe.rows.iter().map(|r| r.0).collect();
    let ws: Vec<f64> = probe.rows.iter().map(|r| r.1).collect();
    (mean_of_final_tenth(&thetas), mean_of_final_tenth(&ws))
}

#[test]
fn criterion_07_variance_reduction_beats_baseline() {
    let inst = garnet_instance(3);
    let mut base_theta = Vec::new();
    let mut base_w = Vec::new();
    let mut vr_theta = Vec::new();
    let mut vr_w = Vec::new();
    for rep in 0..20u64 {
        let seed = derive_seed(40, rep);
        let (bt, bw) = late_variances(&inst, "tdc", seed);
        let (vt, vw) = late_variances(&inst, "vrtdc_iid", seed);
        base_theta.push(bt);
        base_w.push(bw);
        vr_theta.push(vt);
        vr_w.push(vw);
    }
    let (bt, bw) = (lower_median(&mut base_theta), lower_median(&mut base_w));
    let (vt, vw) = (lower_median(&mut vr_theta), lower_median(&mut vr_w));
    assert!(vt < bt, "theta-update variance {vt} not below baseline {bt}");
    assert!(vw < bw, "w-update variance {vw} not below baseline {bw}");
    println!("criterion 7 (variance reduction beats baseline): PASS");
}

#[test]
fn criterion_08_longer_epochs_reach_lower_error() {
    let inst = garnet_instance(3);
    let spec = |batch_size: usize, epochs: usize| AlgoSpec {
        name: "vrtdc_iid".to_string(),
        alpha: 0.1,
        beta: 0.05,
        batch_size,
        epochs,
        sampling: Sampling::Iid,
    };
    // Equal inner-step totals (1e4), different epoch lengths.
    let tail_median = |traces: &[RunTrace]| {
        let mut tails: Vec<f64> = traces
            .iter()
            .map(|t| {
                let errs: Vec<f64> = t.points.iter().map(|p| p.conv_error).collect();
                mean_of_final_tenth(&errs)
            })
            .collect();
        lower_median(&mut tails)
    };
    let short = run_reps(&inst, &spec(200, 50), 10, 0, 20).unwrap();
    let long = run_reps(&inst, &spec(2000, 5), 10, 0, 20).unwrap();
    let (short_med, long_med) = (tail_median(&short), tail_median(&long));
    assert!(
        long_med < short_med,
        "batch 2000 tail error {long_med} not below batch 200's {short_med}"
    );
    println!("criterion 8 (longer epochs reach lower error): PASS");
}

#[test]
fn criterion_09_anchor_tracking_error_small() {
    let inst = cycle2_instance();
    let trace = run_criterion_06_cycle2();
    let anchor = trace.epochs.last().unwrap();
    let z_sq = tracking_error_sq(&anchor.theta_tilde, &anchor.w_tilde, &inst.moments).unwrap();
    assert!(z_sq < 1e-3, "anchor tracking error squared {z_sq}");
    println!("criterion 9 (anchor tracking error small): PASS");
}

#[test]
fn criterion_10_feasible_epsilon_in_both_settings() {
    let inst = cycle2_instance();
    let gamma = inst.model.gamma;

    let iid = Constants::Iid(constants_iid(&inst.spectral, &inst.radii, gamma));
    let found = epsilon_search(Setting::Iid, &iid).expect("i.i.d. search must succeed");
    assert!((1e-8..=1e-1).contains(&found.epsilon));
    assert!(found.report.overall);
    assert!(found.report.d.max(found.report.e).max(found.report.f) < 1.0);

    let mixing = inst.mixing(64).unwrap();
    let markov = Constants::Markov(
        constants_markov(&inst.spectral, &inst.radii, gamma, &mixing).unwrap(),
    );
    let found = epsilon_search(Setting::Markov, &markov).expect("Markov search must succeed");
    assert!((1e-8..=1e-1).contains(&found.epsilon));
    assert!(found.report.overall);
    assert!(found.report.d.max(found.report.e).max(found.report.f) < 1.0);
    println!("criterion 10 (feasible epsilon in both settings): PASS");
}

#[test]
fn criterion_11_byte_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(
        &config_path,
        r#"
repetitions = 3
base_seed = 11
record_every = 10
grid_points = 25

[instance]
kind = "garnet"
n_states = 20
n_actions = 4
branching = 3
d = 5
gamma = 0.9
seed = 3

[[algorithms]]
name = "tdc"
alpha = 0.05
beta = 0.05
batch_size = 100
epochs = 5

[[algorithms]]
name = "vrtdc_markov"
alpha = 0.05
beta = 0.02
batch_size = 100
epochs = 5
"#,
    )
    .unwrap();
    let config = parse_config(&config_path).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    cmd_run(&config, &out_a, 1, None).unwrap();
    cmd_run(&config, &out_b, 1, None).unwrap();
    cmd_run(&config, &out_c, 4, None).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 10, "expected 3 traces + 2 envelopes per algorithm");
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        let c = std::fs::read(out_c.join(name)).unwrap();
        assert_eq!(a, b, "rerun changed bytes of {name}");
        assert_eq!(a, c, "--threads 4 changed bytes of {name}");
    }
    println!("criterion 11 (byte-identical outputs): PASS");
}
