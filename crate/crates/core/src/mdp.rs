//! Block-structured linear MDPs and offline trajectory simulation.
//!
//! States live in `R^d`, with the reward-relevant coordinates `ρ = {0, …, k−1}`
//! first. Each action has a transition matrix `M_a` with the block
//! `M_a[ρ, ρᶜ]` identically zero, so the next relevant state never depends on
//! the current exogenous state, and reward coefficients supported on `ρ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fqi::LinearQ;
use crate::linalg;
use crate::regression::SupportSet;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

const TAG_TRANSITION: u64 = 1;
const TAG_REWARD: u64 = 2;
const TAG_TRAJECTORY: u64 = 3;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpParams {
    pub d: usize,
    pub support_size: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub discount: f64,
    pub state_noise_sd: f64,
    pub reward_noise_sd: f64,
    pub beta_min_floor: f64,
    pub spectral_cap: f64,
}

impl Default for MdpParams {
    fn default() -> Self {
        Self {
            d: 50,
            support_size: 10,
            num_actions: 2,
            horizon: 5,
            discount: 0.9,
            state_noise_sd: 0.4,
            reward_noise_sd: 0.6,
            beta_min_floor: 0.5,
            spectral_cap: 0.9,
        }
    }
}

impl MdpParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.d == 0 {
            return bad("d must be >= 1");
        }
        if self.support_size == 0 || self.support_size > self.d {
            return bad("support_size must be in [1, d]");
        }
        if self.num_actions < 2 {
            return bad("num_actions must be >= 2");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must be in (0, 1]");
        }
        if !(self.state_noise_sd >= 0.0 && self.reward_noise_sd >= 0.0) {
            return bad("noise standard deviations must be >= 0");
        }
        if !(self.beta_min_floor > 0.0) || !self.beta_min_floor.is_finite() {
            return bad("beta_min_floor must be > 0");
        }
        if !(self.spectral_cap > 0.0) || !self.spectral_cap.is_finite() {
            return bad("spectral_cap must be > 0");
        }
        Ok(())
    }
}

/// A fully specified synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MdpSpecFile", try_from = "MdpSpecFile")]
pub struct MdpSpec {
    pub d: usize,
    pub support: SupportSet,
    pub num_actions: usize,
    pub transition: Vec<DMatrix<f64>>,
    pub reward_coef: Vec<DVector<f64>>,
    pub state_noise_sd: f64,
    pub reward_noise_sd: f64,
    pub horizon: usize,
    pub discount: f64,
    pub spectral_cap: f64,
    pub beta_min_floor: f64,
}

impl MdpSpec {
    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.support.dim() != self.d {
            return bad("support dimension differs from d".into());
        }
        if self.transition.len() != self.num_actions || self.reward_coef.len() != self.num_actions {
            return bad("per-action arrays do not match num_actions".into());
        }
        for (a, (m, beta)) in self.transition.iter().zip(&self.reward_coef).enumerate() {
            if m.shape() != (self.d, self.d) || beta.len() != self.d {
                return bad(format!("action {a}: wrong shapes"));
            }
            if m.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            for &i in self.support.indices() {
                for j in (0..self.d).filter(|&j| !self.support.contains(j)) {
                    if m[(i, j)] != 0.0 {
                        return bad(format!("action {a}: M[{i}][{j}] crosses from exogenous to relevant"));
                    }
                }
            }
            for j in (0..self.d).filter(|&j| !self.support.contains(j)) {
                if beta[j] != 0.0 {
                    return bad(format!("action {a}: reward coefficient {j} is off-support"));
                }
            }
            if self.support.indices().iter().any(|&j| beta[j].abs() < self.beta_min_floor) {
                return bad(format!("action {a}: reward coefficient below beta_min_floor"));
            }
            let norm = linalg::spectral_norm(m);
            if norm > self.spectral_cap + 1e-9 {
                return bad(format!("action {a}: spectral norm {norm} exceeds cap"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Smallest on-support reward coefficient magnitude over all actions.
    pub fn min_signal(&self) -> f64 {
        self.reward_coef
            .iter()
            .flat_map(|beta| self.support.indices().iter().map(move |&j| beta[j].abs()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Row-major, human-readable form of [`MdpSpec`].
#[derive(Serialize, Deserialize)]
struct MdpSpecFile {
    d: usize,
    support: Vec<usize>,
    num_actions: usize,
    horizon: usize,
    discount: f64,
    state_noise_sd: f64,
    reward_noise_sd: f64,
    spectral_cap: f64,
    beta_min_floor: f64,
    reward_coef: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl From<MdpSpec> for MdpSpecFile {
    fn from(s: MdpSpec) -> Self {
        Self {
            d: s.d,
            support: s.support.indices().to_vec(),
            num_actions: s.num_actions,
            horizon: s.horizon,
            discount: s.discount,
            state_noise_sd: s.state_noise_sd,
            reward_noise_sd: s.reward_noise_sd,
            spectral_cap: s.spectral_cap,
            beta_min_floor: s.beta_min_floor,
            reward_coef: s.reward_coef.iter().map(|b| b.iter().copied().collect()).collect(),
            transition: s
                .transition
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<MdpSpecFile> for MdpSpec {
    type Error = Error;

    fn try_from(f: MdpSpecFile) -> Result<Self> {
        let d = f.d;
        let transition = f
            .transition
            .iter()
            .map(|rows| {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidConfig("transition matrix is not d×d".into()));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = MdpSpec {
            d,
            support: SupportSet::new(f.support, d)?,
            num_actions: f.num_actions,
            transition,
            reward_coef: f.reward_coef.into_iter().map(DVector::from_vec).collect(),
            state_noise_sd: f.state_noise_sd,
            reward_noise_sd: f.reward_noise_sd,
            horizon: f.horizon,
            discount: f.discount,
            spectral_cap: f.spectral_cap,
            beta_min_floor: f.beta_min_floor,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Draw a random block-structured MDP.
///
/// Transition entries are i.i.d. `N(0.2, 1)` outside the zero block, then each
/// `M_a` is scaled by `cap / max(cap, ‖M_a‖₂)`. On-support reward coefficients
/// are `±U[b, 3b]` with `b = beta_min_floor`.
pub fn generate_mdp(params: &MdpParams, seed: u64) -> Result<MdpSpec> {
    params.validate()?;
    let d = params.d;
    let support = SupportSet::prefix(params.support_size, d)?;
    let k = params.support_size;
    let entry = Normal::new(0.2, 1.0).expect("valid normal");

    let transition = (0..params.num_actions)
        .map(|a| {
            let mut rng = rng::stream(seed, &[TAG_TRANSITION, a as u64]);
            let mut m = DMatrix::from_fn(d, d, |_, _| entry.sample(&mut rng));
            m.view_mut((0, k), (k, d - k)).fill(0.0);
            let norm = linalg::spectral_norm(&m);
            m *= params.spectral_cap / norm.max(params.spectral_cap);
            m
        })
        .collect();

    let b = params.beta_min_floor;
    let reward_coef = (0..params.num_actions)
        .map(|a| {
            let mut rng = rng::stream(seed, &[TAG_REWARD, a as u64]);
            DVector::from_fn(d, |j, _| {
                if j < k {
                    let magnitude = rng.random_range(b..=3.0 * b);
                    if rng.random_bool(0.5) {
                        magnitude
                    } else {
                        -magnitude
                    }
                } else {
                    0.0
                }
            })
        })
        .collect();

    let spec = MdpSpec {
        d,
        support,
        num_actions: params.num_actions,
        transition,
        reward_coef,
        state_noise_sd: params.state_noise_sd,
        reward_noise_sd: params.reward_noise_sd,
        horizon: params.horizon,
        discount: params.discount,
        spectral_cap: params.spectral_cap,
        beta_min_floor: params.beta_min_floor,
    };
    spec.validate()?;
    Ok(spec)
}

/// One environment step. Always consumes `1 + d` standard normals from `rng`
/// (reward noise first), regardless of the noise scales.
pub fn step(spec: &MdpSpec, state: &[f64], action: usize, rng: &mut StreamRng) -> (f64, Vec<f64>) {
    assert!(action < spec.num_actions, "action {action} out of range");
    assert_eq!(state.len(), spec.d, "state has wrong dimension");
    let s = DVector::from_column_slice(state);
    let eps_r: f64 = StandardNormal.sample(rng);
    let reward = spec.reward_coef[action].dot(&s) + spec.reward_noise_sd * eps_r;
    let mut next = &spec.transition[action] * &s;
    for v in next.iter_mut() {
        let eps: f64 = StandardNormal.sample(rng);
        *v += spec.state_noise_sd * eps;
    }
    (reward, next.iter().copied().collect())
}

/// Product feature map: block `action` holds the state, other blocks are zero.
pub fn features(state: &[f64], action: usize, num_actions: usize) -> Vec<f64> {
    assert!(action < num_actions, "action {action} out of range");
    let d = state.len();
    let mut phi = vec![0.0; d * num_actions];
    phi[action * d..(action + 1) * d].copy_from_slice(state);
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// `P(a | s) ∝ exp(a · coefᵀs)`; for two actions `P(1 | s) = σ(coefᵀs)`.
    Logistic { coef: Vec<f64> },
    /// Point mass on `argmax_a q_t(s, a)`, lowest index on ties.
    Greedy(Arc<LinearQ>),
    Uniform,
}

impl Policy {
    /// Logistic policy with coefficients drawn from `U[−0.5, 0.5]`.
    pub fn random_logistic(d: usize, rng: &mut StreamRng) -> Self {
        Policy::Logistic {
            coef: (0..d).map(|_| rng.random_range(-0.5..=0.5)).collect(),
        }
    }

    /// Action probabilities at stage `t` (ignored by stationary policies).
    pub fn probs(&self, state: &[f64], t: usize, num_actions: usize) -> Vec<f64> {
        match self {
            Policy::Uniform => vec![1.0 / num_actions as f64; num_actions],
            Policy::Logistic { coef } => {
                assert_eq!(coef.len(), state.len(), "policy/state dimension mismatch");
                let score: f64 = coef.iter().zip(state).map(|(c, s)| c * s).sum();
                let logits: Vec<f64> = (0..num_actions).map(|a| a as f64 * score).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                weights.into_iter().map(|w| w / total).collect()
            }
            Policy::Greedy(q) => {
                let mut probs = vec![0.0; num_actions];
                probs[q.greedy_action(t, state)] = 1.0;
                probs
            }
        }
    }

    pub fn sample(&self, state: &[f64], t: usize, num_actions: usize, rng: &mut StreamRng) -> usize {
        let probs = self.probs(state, t, num_actions);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // Roundoff left `acc` just below 1; fall back to the last action with mass.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(num_actions - 1)
    }
}

/// `policy.probs` as a free function.
pub fn policy_probs(policy: &Policy, state: &[f64], t: usize, num_actions: usize) -> Vec<f64> {
    policy.probs(state, t, num_actions)
}

/// A borrowed `(s_t, a_t, r_t, s_{t+1})` tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a [f64],
}

/// `n` trajectories of `horizon` transitions each.
///
/// States are stored once per trajectory (`horizon + 1` of them), so the
/// next state of step `t` is the state of step `t + 1` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    n: usize,
    horizon: usize,
    d: usize,
    num_actions: usize,
    states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    pub seed: u64,
    pub spec_fingerprint: String,
}

/// Per-trajectory storage used when assembling a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryData {
    /// `(horizon + 1) × d`, row-major.
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn from_trajectories(
        trajectories: Vec<TrajectoryData>,
        d: usize,
        num_actions: usize,
        seed: u64,
        spec_fingerprint: String,
    ) -> Result<Self> {
        let n = trajectories.len();
        let horizon = trajectories.first().map_or(0, |t| t.actions.len());
        if n == 0 || horizon == 0 || d == 0 {
            return Err(Error::InvalidArgument("empty trajectory batch".into()));
        }
        let mut states = Vec::with_capacity(n * (horizon + 1) * d);
        let mut actions = Vec::with_capacity(n * horizon);
        let mut rewards = Vec::with_capacity(n * horizon);
        for (i, tr) in trajectories.into_iter().enumerate() {
            if tr.actions.len() != horizon
                || tr.rewards.len() != horizon
                || tr.states.len() != (horizon + 1) * d
            {
                return Err(Error::DimensionMismatch(format!(
                    "trajectory {i} does not match horizon {horizon} and dimension {d}"
                )));
            }
            if tr.actions.iter().any(|&a| a >= num_actions) {
                return Err(Error::InvalidArgument(format!("trajectory {i} has an invalid action")));
            }
            if tr.states.iter().chain(&tr.rewards).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            states.extend(tr.states);
            actions.extend(tr.actions);
            rewards.extend(tr.rewards);
        }
        Ok(Self {
            n,
            horizon,
            d,
            num_actions,
            states,
            actions,
            rewards,
            seed,
            spec_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// State of trajectory `i` at step `t ∈ [0, horizon]`.
    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * (self.horizon + 1) + t) * self.d;
        &self.states[start..start + self.d]
    }

    pub fn action(&self, i: usize, t: usize) -> usize {
        self.actions[i * self.horizon + t]
    }

    pub fn reward(&self, i: usize, t: usize) -> f64 {
        self.rewards[i * self.horizon + t]
    }

    pub fn transition(&self, i: usize, t: usize) -> Transition<'_> {
        assert!(t < self.horizon);
        Transition {
            state: self.state(i, t),
            action: self.action(i, t),
            reward: self.reward(i, t),
            next_state: self.state(i, t + 1),
        }
    }

    /// Transitions of trajectory `i` in time order.
    pub fn trajectory(&self, i: usize) -> impl Iterator<Item = Transition<'_>> + '_ {
        (0..self.horizon).map(move |t| self.transition(i, t))
    }

    /// Indices of the trajectories whose step-`t` action is `action`.
    pub fn action_cell(&self, t: usize, action: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.action(i, t) == action).collect()
    }

    /// Step-`t` states of the given trajectories as an `rows × d` matrix.
    pub fn state_matrix(&self, t: usize, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.d, |r, j| self.state(rows[r], t)[j])
    }
}

/// Simulate `n` independent trajectories of `spec.horizon` steps.
///
/// `s₀ ~ N(0, initial_sd² I)`. Trajectory `i` draws from its own stream derived
/// from `(seed, i)`, so the output does not depend on evaluation order.
pub fn simulate(spec: &MdpSpec, behavior: &Policy, n: usize, initial_sd: f64, seed: u64) -> Result<TrajectoryBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(initial_sd >= 0.0) {
        return Err(Error::InvalidArgument("initial_sd must be >= 0".into()));
    }
    let one = |i: usize| simulate_one(spec, behavior, initial_sd, seed, i);
    #[cfg(feature = "parallel")]
    let trajectories: Vec<TrajectoryData> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trajectories: Vec<TrajectoryData> = (0..n).map(one).collect();
    TrajectoryBatch::from_trajectories(trajectories, spec.d, spec.num_actions, seed, spec.fingerprint())
}

fn simulate_one(spec: &MdpSpec, behavior: &Policy, initial_sd: f64, seed: u64, i: usize) -> TrajectoryData {
    let mut rng = rng::stream(seed, &[TAG_TRAJECTORY, i as u64]);
    let d = spec.d;
    let mut states = Vec::with_capacity((spec.horizon + 1) * d);
    states.extend((0..d).map(|_| initial_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)));
    let mut actions = Vec::with_capacity(spec.horizon);
    let mut rewards = Vec::with_capacity(spec.horizon);
    for t in 0..spec.horizon {
        let state = &states[t * d..(t + 1) * d];
        let action = behavior.sample(state, t, spec.num_actions, &mut rng);
        let (reward, next) = step(spec, state, action, &mut rng);
        actions.push(action);
        rewards.push(reward);
        states.extend(next);
    }
    TrajectoryData {
        states,
        actions,
        rewards,
    }
}

/// Draw `count` states from the initial-state law.
pub fn sample_initial_states(d: usize, count: usize, initial_sd: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, &[]);
    (0..count)
        .map(|_| {
            (0..d)
                .map(|_| initial_sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> MdpParams {
        MdpParams {
            d: 8,
            support_size: 3,
            ..MdpParams::default()
        }
    }

    #[test]
    fn default_sized_spec_satisfies_invariants() {
        let spec = generate_mdp(&MdpParams::default(), 1).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.support.indices(), &(0..10).collect::<Vec<_>>()[..]);
        for m in &spec.transition {
            for i in 0..10 {
                for j in 10..50 {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
            assert!(linalg::spectral_norm(m) <= 0.9 + 1e-9);
        }
        assert!(spec.min_signal() >= 0.5);
    }

    #[test]
    fn full_support_generates() {
        let params = MdpParams {
            d: 6,
            support_size: 6,
            ..MdpParams::default()
        };
        generate_mdp(&params, 3).unwrap().validate().unwrap();
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_mdp(&small_params(), 42).unwrap();
        let b = generate_mdp(&small_params(), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a, generate_mdp(&small_params(), 43).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = MdpParams {
            support_size: 9,
            ..small_params()
        };
        assert!(matches!(generate_mdp(&p, 0), Err(Error::InvalidConfig(_))));
        let p = MdpParams {
            num_actions: 1,
            ..small_params()
        };
        assert!(generate_mdp(&p, 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = generate_mdp(&small_params(), 5).unwrap();
        let text = spec.to_json_pretty().unwrap();
        assert!(text.contains("\"transition\""));
        assert_eq!(MdpSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn tampered_spec_rejected() {
        let mut spec = generate_mdp(&small_params(), 5).unwrap();
        spec.transition[0][(0, 7)] = 0.1;
        assert!(spec.validate().is_err());
        let mut spec = generate_mdp(&small_params(), 5).unwrap();
        spec.reward_coef[1][5] = 0.3;
        assert!(spec.validate().is_err());
    }

    fn noiseless(mut spec: MdpSpec) -> MdpSpec {
        spec.state_noise_sd = 0.0;
        spec.reward_noise_sd = 0.0;
        spec
    }

    #[test]
    fn noiseless_step_is_affine() {
        let spec = noiseless(generate_mdp(&small_params(), 7).unwrap());
        let s: Vec<f64> = (0..8).map(|j| j as f64 * 0.3 - 1.0).collect();
        let (r, next) = step(&spec, &s, 1, &mut rng::stream(0, &[]));
        let sv = DVector::from_vec(s.clone());
        assert_eq!(r, spec.reward_coef[1].dot(&sv));
        let expect = &spec.transition[1] * &sv;
        assert_eq!(next, expect.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn exogenous_coordinates_do_not_reach_relevant_block() {
        let spec = noiseless(generate_mdp(&small_params(), 7).unwrap());
        let mut rng = rng::stream(1, &[]);
        for _ in 0..200 {
            let s1: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut s2 = s1.clone();
            for v in &mut s2[3..] {
                *v = rng.random_range(-5.0..5.0);
            }
            for a in 0..2 {
                let (r1, n1) = step(&spec, &s1, a, &mut rng::stream(9, &[]));
                let (r2, n2) = step(&spec, &s2, a, &mut rng::stream(9, &[]));
                assert_eq!(r1, r2);
                assert_eq!(n1[..3], n2[..3]);
            }
        }
    }

    #[test]
    fn relevant_only_state_maps_through_relevant_block() {
        let spec = noiseless(generate_mdp(&small_params(), 11).unwrap());
        let s = vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (_, next) = step(&spec, &s, 0, &mut rng::stream(0, &[]));
        let block = spec.transition[0].view((0, 0), (3, 3)) * DVector::from_vec(vec![0.5, -1.0, 2.0]);
        for i in 0..3 {
            assert_eq!(next[i], block[i]);
        }
    }

    #[test]
    fn features_layout() {
        assert_eq!(features(&[3.0, 4.0], 1, 2), vec![0.0, 0.0, 3.0, 4.0]);
        assert_eq!(features(&[3.0, 4.0], 0, 2), vec![3.0, 4.0, 0.0, 0.0]);
        let f0 = features(&[1.0, -2.0, 0.5], 0, 2);
        let f1 = features(&[1.0, -2.0, 0.5], 1, 2);
        assert_eq!(f0.iter().zip(&f1).map(|(a, b)| a * b).sum::<f64>(), 0.0);
    }

    #[test]
    fn logistic_policy_probabilities() {
        let zero = Policy::Logistic { coef: vec![0.0; 3] };
        assert_eq!(zero.probs(&[1.0, 2.0, 3.0], 0, 2), vec![0.5, 0.5]);
        let p = Policy::Logistic { coef: vec![3f64.ln(), 0.0] };
        let probs = p.probs(&[1.0, 7.0], 0, 2);
        assert!((probs[1] - 0.75).abs() < 1e-12);
        let three = p.probs(&[1.0, 7.0], 0, 3);
        assert!((three.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_shape_and_chaining() {
        let mut params = small_params();
        params.horizon = 2;
        let spec = generate_mdp(&params, 1).unwrap();
        let batch = simulate(&spec, &Policy::Uniform, 3, 1.0, 99).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch.horizon(), 2);
        for i in 0..3 {
            let steps: Vec<_> = batch.trajectory(i).collect();
            assert_eq!(steps.len(), 2);
            assert_eq!(steps[0].next_state, steps[1].state);
        }
        assert_eq!(batch.spec_fingerprint, spec.fingerprint());
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = generate_mdp(&small_params(), 1).unwrap();
        let pol = Policy::Logistic { coef: vec![0.3; 8] };
        let a = simulate(&spec, &pol, 20, 1.0, 5).unwrap();
        let b = simulate(&spec, &pol, 20, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_policy_frequency() {
        let mut params = small_params();
        params.horizon = 1;
        let spec = generate_mdp(&params, 2).unwrap();
        let batch = simulate(&spec, &Policy::Uniform, 10_000, 1.0, 8).unwrap();
        let ones = (0..10_000).filter(|&i| batch.action(i, 0) == 1).count() as f64;
        assert!((ones / 10_000.0 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn transition_noise_is_block_uncorrelated() {
        let mut params = small_params();
        params.horizon = 1;
        let spec = generate_mdp(&params, 4).unwrap();
        let n = 100_000;
        let batch = simulate(&spec, &Policy::Uniform, n, 1.0, 12).unwrap();
        let mut cov = DMatrix::<f64>::zeros(8, 8);
        for i in 0..n {
            let tr = batch.transition(i, 0);
            let pred = &spec.transition[tr.action] * DVector::from_column_slice(tr.state);
            let resid = DVector::from_column_slice(tr.next_state) - pred;
            cov += &resid * resid.transpose();
        }
        cov /= n as f64;
        let bound = 4.0 / (n as f64).sqrt();
        for i in 0..3 {
            for j in 3..8 {
                assert!(cov[(i, j)].abs() <= bound, "cov[{i}][{j}] = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn batch_rejects_inconsistent_trajectories() {
        let good = TrajectoryData {
            states: vec![0.0; 4],
            actions: vec![0],
            rewards: vec![1.0],
        };
        let short = TrajectoryData {
            states: vec![0.0; 2],
            ..good.clone()
        };
        assert!(TrajectoryBatch::from_trajectories(vec![good, short], 2, 2, 0, String::new()).is_err());
    }
}
