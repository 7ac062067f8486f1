//! Finite MDP models, policies, feature maps, the Garnet generator, a
//! continuing Frozen Lake, stationary distributions, and both sampling
//! regimes (i.i.d. and Markovian).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, norm_inf, solve_linear, Matrix, Vector};

/// Finite MDP: transition kernel, bounded reward table, and discount.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MDPModel {
    pub n_states: usize,
    pub n_actions: usize,
    /// `kernel[s][a][s']` = P(s' | s, a); every (s, a) row sums to 1.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a][s']`, uniformly bounded by `r_max`.
    pub reward: Vec<Vec<Vec<f64>>>,
    /// Uniform reward bound.
    pub r_max: f64,
    /// Discount factor in (0, 1).
    pub gamma: f64,
}

impl MDPModel {
    /// Check the stochasticity and boundedness invariants.
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = &self.kernel[s][a];
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "negative kernel entry at ({s}, {a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParams(format!(
                        "kernel row ({s}, {a}) sums to {sum}, not 1"
                    )));
                }
                if self.reward[s][a].iter().any(|&r| r.abs() > self.r_max + 1e-12) {
                    return Err(Error::InvalidParams(format!(
                        "reward at ({s}, {a}) exceeds r_max"
                    )));
                }
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParams(format!("gamma {} not in (0,1)", self.gamma)));
        }
        Ok(())
    }
}

/// Stationary stochastic policy pi(a | s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Policy {
    /// Row-stochastic `n_states x n_actions` table.
    pub probs: Matrix,
}

/// State feature map with rows bounded by unit norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMap {
    /// `n_states x d` matrix whose row s is phi(s).
    pub phi: Matrix,
    pub d: usize,
}

impl FeatureMap {
    /// Borrow phi(s).
    pub fn row(&self, s: usize) -> &[f64] {
        self.phi.row(s)
    }
}

/// One sampled transition x = (s, a, r, s').
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// State chain induced by a policy: p(s'|s) = sum_a P(s'|s,a) pi(a|s).
#[derive(Debug, Clone)]
pub struct ChainMatrix {
    pub p: Matrix,
    /// Single communicating class covering all states.
    pub irreducible: bool,
    /// Period 1 (set only when irreducible).
    pub aperiodic: bool,
}

/// Fitted geometric-ergodicity envelope: TV distance to stationarity
/// decays no slower than kappa * rho^t.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixingEstimate {
    pub kappa: f64,
    pub rho: f64,
}

/// Derive a per-stream RNG from a base seed.
///
/// SplitMix64 finalization of (seed, stream) keeps streams statistically
/// independent, so repetitions can run in any order or in parallel.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Derive an independent sub-seed (e.g. one per repetition) from a base
/// seed, using the same SplitMix64 finalization as [`stream_rng`].
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw an index from a finite distribution by inverse-CDF scan.
pub fn sample_discrete(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate a Garnet random MDP with the given branching factor plus a
/// uniform[0,1] feature matrix with unit-normalized rows.
///
/// For each (s, a) exactly `branching` successor states are chosen uniformly
/// without replacement; their probabilities are uniform(0,1) normalized.
/// Rewards r(s,a,s') are uniform[0,1], so `r_max = 1`.
pub fn generate_garnet(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    d: usize,
    gamma: f64,
    seed: u64,
) -> Result<(MDPModel, FeatureMap)> {
    if n_states == 0 || n_actions == 0 || d == 0 {
        return Err(Error::InvalidParams("zero dimension".into()));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::InvalidParams(format!(
            "branching {branching} outside 1..={n_states}"
        )));
    }
    let mut rng = stream_rng(seed, 0);

    let mut kernel = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            // Partial Fisher-Yates draw of `branching` distinct successors.
            let mut pool: Vec<usize> = (0..n_states).collect();
            for k in 0..branching {
                let j = k + rng.gen_range(0..(n_states - k));
                pool.swap(k, j);
            }
            let mut weights: Vec<f64> = (0..branching).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            for (k, &succ) in pool[..branching].iter().enumerate() {
                kernel[s][a][succ] = weights[k];
                reward[s][a][succ] = rng.gen::<f64>();
            }
        }
    }

    let mut phi = Matrix::zeros(n_states, d);
    for s in 0..n_states {
        let mut row: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let len = norm(&row);
        for x in &mut row {
            *x /= len;
        }
        for (j, &x) in row.iter().enumerate() {
            phi.set(s, j, x);
        }
    }

    let model = MDPModel { n_states, n_actions, kernel, reward, r_max: 1.0, gamma };
    model.validate()?;
    Ok((model, FeatureMap { phi, d }))
}

/// Continuing 4x4 Frozen Lake.
///
/// Standard map: start (0,0), goal (3,3), holes (1,1), (1,3), (2,3), (3,0).
/// Slip model: intended direction w.p. 1/3 and each perpendicular direction
/// w.p. 1/3; walls reflect to the same cell. Reaching the goal earns reward
/// 1; goal and hole cells transition deterministically back to the start
/// with reward 0, which makes the chain ergodic.
pub fn make_frozen_lake(gamma: f64) -> MDPModel {
    const N: usize = 4;
    let n_states = N * N;
    let n_actions = 4; // 0 = left, 1 = down, 2 = right, 3 = up
    let holes = [(1usize, 1usize), (1, 3), (2, 3), (3, 0)];
    let goal = (3usize, 3usize);
    let start = 0usize;
    let idx = |r: usize, c: usize| r * N + c;
    let goal_idx = idx(goal.0, goal.1);
    let is_terminal = |s: usize| {
        s == goal_idx || holes.iter().any(|&(r, c)| idx(r, c) == s)
    };
    // (dr, dc) for left, down, right, up.
    let deltas: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

    let mut kernel = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    let mut reward = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
    for s in 0..n_states {
        for a in 0..n_actions {
            if is_terminal(s) {
                kernel[s][a][start] = 1.0;
                continue;
            }
            let (r0, c0) = (s / N, s % N);
            // Intended direction plus the two perpendicular ones.
            for slip in [a, (a + 1) % 4, (a + 3) % 4] {
                let (dr, dc) = deltas[slip];
                let r1 = r0 as isize + dr;
                let c1 = c0 as isize + dc;
                let dest = if r1 < 0 || r1 >= N as isize || c1 < 0 || c1 >= N as isize {
                    s // wall: stay put
                } else {
                    idx(r1 as usize, c1 as usize)
                };
                kernel[s][a][dest] += 1.0 / 3.0;
                if dest == goal_idx {
                    reward[s][a][dest] = 1.0;
                }
            }
        }
    }
    MDPModel { n_states, n_actions, kernel, reward, r_max: 1.0, gamma }
}

/// Feature matrix with standard-normal entries, rows normalized to unit norm.
pub fn make_features_gaussian(n_states: usize, d: usize, seed: u64) -> FeatureMap {
    assert!(d >= 1, "feature dimension must be positive");
    let mut rng = stream_rng(seed, 1);
    let mut phi = Matrix::zeros(n_states, d);
    for s in 0..n_states {
        let mut row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let len = norm(&row);
        for x in &mut row {
            *x /= len;
        }
        for (j, &x) in row.iter().enumerate() {
            phi.set(s, j, x);
        }
    }
    FeatureMap { phi, d }
}

/// Policy construction kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Uniform,
    Random,
}

/// Build a policy: `Uniform` puts 1/n_actions everywhere; `Random` draws
/// uniform(0,1) entries and normalizes each row, deterministically in seed.
pub fn make_policy(kind: PolicyKind, n_states: usize, n_actions: usize, seed: u64) -> Policy {
    let mut probs = Matrix::zeros(n_states, n_actions);
    match kind {
        PolicyKind::Uniform => {
            let p = 1.0 / n_actions as f64;
            probs.data.fill(p);
        }
        PolicyKind::Random => {
            let mut rng = stream_rng(seed, 2);
            for s in 0..n_states {
                let mut row: Vec<f64> = (0..n_actions).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = row.iter().sum();
                for x in &mut row {
                    *x /= total;
                }
                for (a, &x) in row.iter().enumerate() {
                    probs.set(s, a, x);
                }
            }
        }
    }
    Policy { probs }
}

/// Marginalize the kernel over a policy: p(s'|s) = sum_a P(s'|s,a) pi(a|s).
pub fn induced_chain(model: &MDPModel, policy: &Policy) -> Result<ChainMatrix> {
    if policy.probs.rows != model.n_states || policy.probs.cols != model.n_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{} but model has {} states, {} actions",
            policy.probs.rows, policy.probs.cols, model.n_states, model.n_actions
        )));
    }
    let n = model.n_states;
    let mut p = Matrix::zeros(n, n);
    for s in 0..n {
        for a in 0..model.n_actions {
            let w = policy.probs.at(s, a);
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                let val = p.at(s, s2) + w * model.kernel[s][a][s2];
                p.set(s, s2, val);
            }
        }
    }
    let irreducible = is_irreducible(&p);
    let aperiodic = irreducible && chain_period(&p) == 1;
    Ok(ChainMatrix { p, irreducible, aperiodic })
}

/// Strong connectivity via forward and backward reachability from state 0.
fn is_irreducible(p: &Matrix) -> bool {
    let n = p.rows;
    let reach = |transposed: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if transposed { p.at(v, u) } else { p.at(u, v) };
                if edge > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    };
    reach(false).iter().all(|&x| x) && reach(true).iter().all(|&x| x)
}

/// Period of an irreducible chain: gcd of (level[u] + 1 - level[v]) over
/// edges u -> v, with levels from a BFS rooted at state 0.
fn chain_period(p: &Matrix) -> u64 {
    let n = p.rows;
    let mut level = vec![i64::MIN; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut order = Vec::new();
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for v in 0..n {
            if p.at(u, v) > 0.0 && level[v] == i64::MIN {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g: u64 = 0;
    for &u in &order {
        for v in 0..n {
            if p.at(u, v) > 0.0 {
                let diff = (level[u] + 1 - level[v]).unsigned_abs();
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Unique invariant distribution of an irreducible chain.
///
/// Solves (P^T - I) mu = 0 with a normalization row substituted in, then
/// verifies the residual. Periodic irreducible chains still have a unique
/// invariant distribution; callers can inspect `chain.aperiodic`.
pub fn stationary_distribution(chain: &ChainMatrix) -> Result<Vector> {
    if !chain.irreducible {
        return Err(Error::NotErgodic(
            "reducible chain: invariant distribution is not unique".into(),
        ));
    }
    let n = chain.p.rows;
    // (P^T - I) with the last equation replaced by sum(mu) = 1.
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = chain.p.at(j, i) - if i == j { 1.0 } else { 0.0 };
            m.set(i, j, v);
        }
    }
    for j in 0..n {
        m.set(n - 1, j, 1.0);
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let mut mu = solve_linear(&m, &rhs)?;
    // Clean tiny negative round-off and renormalize.
    for x in &mut mu {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0;
        }
    }
    let total: f64 = mu.iter().sum();
    for x in &mut mu {
        *x /= total;
    }
    // Residual check: || mu^T P - mu^T ||_inf <= 1e-12.
    let mut residual = vec![0.0; n];
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += mu[i] * chain.p.at(i, j);
        }
        residual[j] = acc - mu[j];
    }
    if norm_inf(&residual) > 1e-12 {
        return Err(Error::NotErgodic(format!(
            "stationary solve residual {:.3e} exceeds 1e-12",
            norm_inf(&residual)
        )));
    }
    Ok(mu)
}

/// Where a trajectory starts.
#[derive(Debug, Clone)]
pub enum Start {
    State(usize),
    /// Draw the initial state from the invariant distribution.
    Stationary,
}

/// Sample a Markovian trajectory of `length` transitions under the
/// behavior policy; fully deterministic given the seed.
pub fn sample_trajectory(
    model: &MDPModel,
    behavior: &Policy,
    length: usize,
    seed: u64,
    start: Start,
) -> Result<Vec<Transition>> {
    let mut rng = stream_rng(seed, 3);
    let mut s = match start {
        Start::State(s0) => {
            if s0 >= model.n_states {
                return Err(Error::InvalidParams(format!("start state {s0} out of range")));
            }
            s0
        }
        Start::Stationary => {
            let chain = induced_chain(model, behavior)?;
            let mu = stationary_distribution(&chain)?;
            sample_discrete(&mut rng, &mu)
        }
    };
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let a = sample_discrete(&mut rng, behavior.probs.row(s));
        let s_next = sample_discrete(&mut rng, &model.kernel[s][a]);
        let r = model.reward[s][a][s_next];
        out.push(Transition { s, a, r, s_next });
        s = s_next;
    }
    Ok(out)
}

/// Draw `n` independent transitions: s ~ mu, a ~ pi_b(.|s), s' ~ P(.|s,a).
pub fn sample_iid(
    model: &MDPModel,
    behavior: &Policy,
    mu: &[f64],
    n: usize,
    seed: u64,
) -> Vec<Transition> {
    let mut sampler = IidSampler::new(model.clone(), behavior.clone(), mu.to_vec(), seed);
    (0..n).map(|_| sampler.next_transition()).collect()
}

/// Stateful i.i.d. sampler; owns its RNG so cloned samplers with distinct
/// sub-seeds can feed concurrent consumers.
pub struct IidSampler {
    model: MDPModel,
    behavior: Policy,
    mu: Vector,
    rng: ChaCha8Rng,
}

impl IidSampler {
    pub fn new(model: MDPModel, behavior: Policy, mu: Vector, seed: u64) -> Self {
        IidSampler { model, behavior, mu, rng: stream_rng(seed, 4) }
    }

    pub fn next_transition(&mut self) -> Transition {
        let s = sample_discrete(&mut self.rng, &self.mu);
        let a = sample_discrete(&mut self.rng, self.behavior.probs.row(s));
        let s_next = sample_discrete(&mut self.rng, &self.model.kernel[s][a]);
        Transition { s, a, r: self.model.reward[s][a][s_next], s_next }
    }
}

/// Fit a geometric mixing envelope kappa * rho^t to the chain's measured
/// total-variation distances m(t) = sup_s d_TV(P^t(.|s), mu), t = 1..t_max.
///
/// Least squares on log m(t) over indices with m(t) > 1e-14, then kappa is
/// inflated minimally so the envelope dominates every fitted point. Special
/// cases: all m(t) below threshold returns the (kappa = 0, rho = 0.5)
/// convention; a non-decaying fit (periodic chains such as the 2-cycle)
/// clamps rho just below 1 so downstream constants stay finite.
pub fn estimate_mixing(chain: &ChainMatrix, mu: &[f64], t_max: usize) -> Result<MixingEstimate> {
    if !chain.irreducible {
        return Err(Error::NotErgodic("mixing estimate needs an irreducible chain".into()));
    }
    if t_max < 2 {
        return Err(Error::InvalidParams("t_max must be at least 2".into()));
    }
    let n = chain.p.rows;
    let mut pt = chain.p.clone();
    let mut ms = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        let mut worst = 0.0f64;
        for s in 0..n {
            let tv: f64 = 0.5 * (0..n).map(|j| (pt.at(s, j) - mu[j]).abs()).sum::<f64>();
            worst = worst.max(tv);
        }
        ms.push(worst);
        pt = pt.mul_mat(&chain.p);
    }

    let fitted: Vec<(f64, f64)> = ms
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 1e-14)
        .map(|(i, &m)| ((i + 1) as f64, m.ln()))
        .collect();
    if fitted.is_empty() {
        // Instantly mixing chain: m(1) = 0 already.
        return Ok(MixingEstimate { kappa: 0.0, rho: 0.5 });
    }

    // Least squares for log m = log kappa + t log rho.
    let k = fitted.len() as f64;
    let st: f64 = fitted.iter().map(|(t, _)| t).sum();
    let sy: f64 = fitted.iter().map(|(_, y)| y).sum();
    let stt: f64 = fitted.iter().map(|(t, _)| t * t).sum();
    let sty: f64 = fitted.iter().map(|(t, y)| t * y).sum();
    let denom = k * stt - st * st;
    let slope = if denom.abs() < 1e-300 { 0.0 } else { (k * sty - st * sy) / denom };

    // Clamp: periodic chains fit slope ~0; keep rho strictly inside (0, 1).
    let rho = slope.exp().clamp(1e-12, 1.0 - 1e-9);

    // Inflate kappa minimally so kappa * rho^t >= m(t) for every fitted t.
    let mut kappa = 0.0f64;
    for (t, y) in &fitted {
        kappa = kappa.max(y.exp() / rho.powf(*t));
    }
    Ok(MixingEstimate { kappa, rho })
}

/// On-disk model document: all tables as nested arrays at full double
/// precision plus the generation provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub features: Vec<Vec<f64>>,
    pub seed_provenance: String,
}

impl ModelFile {
    pub fn from_parts(model: &MDPModel, features: &FeatureMap, provenance: &str) -> Self {
        ModelFile {
            n_states: model.n_states,
            n_actions: model.n_actions,
            gamma: model.gamma,
            r_max: model.r_max,
            kernel: model.kernel.clone(),
            reward: model.reward.clone(),
            features: (0..model.n_states).map(|s| features.row(s).to_vec()).collect(),
            seed_provenance: provenance.to_string(),
        }
    }

    pub fn into_parts(self) -> (MDPModel, FeatureMap) {
        let d = self.features.first().map_or(0, |r| r.len());
        let phi = Matrix::from_rows(&self.features);
        (
            MDPModel {
                n_states: self.n_states,
                n_actions: self.n_actions,
                kernel: self.kernel,
                reward: self.reward,
                r_max: self.r_max,
                gamma: self.gamma,
            },
            FeatureMap { phi, d },
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("model serialization cannot fail");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError(e.to_string()))
    }
}

/// Canonical two-state worked instance: deterministic cycle s1 -> s2 -> s1,
/// reward 1 everywhere, gamma = 1/2, orthonormal features, and a single
/// action (so target = behavior and every importance ratio is 1).
pub fn cycle2() -> (MDPModel, FeatureMap, Policy, Policy, Vector) {
    let model = MDPModel {
        n_states: 2,
        n_actions: 1,
        kernel: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
        reward: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
        r_max: 1.0,
        gamma: 0.5,
    };
    let phi = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let features = FeatureMap { phi, d: 2 };
    let policy = Policy { probs: Matrix::from_rows(&[vec![1.0], vec![1.0]]) };
    let mu = vec![0.5, 0.5];
    (model, features, policy.clone(), policy, mu)
}
