//! Asynchronous advantage actor-critic with clipped or transformed-Bellman
//! n-step targets.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{make_game, GameConfig, WrappedEnv, WrapperConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, LearningCurve};
use crate::network::{build_policy_value, transfer_layers, LayerSet, NetworkConfig};
use crate::numeric::{
    clip_global_norm, entropy, policy_gradient, softmax, value_mse, ComputeGraph, OutputGrad, ParamSet, RmsPropConfig,
    RmsPropState, Scalar, Tensor,
};

/// `h(z) = sign(z)(sqrt(|z| + 1) - 1) + eps * z`.
pub fn h(z: f64, eps: f64) -> f64 {
    sign(z) * ((z.abs() + 1.0).sqrt() - 1.0) + eps * z
}

/// Closed-form inverse of [`h`].
pub fn h_inv(x: f64, eps: f64) -> f64 {
    let root = ((1.0 + 4.0 * eps * (x.abs() + 1.0 + eps)).sqrt() - 1.0) / (2.0 * eps);
    sign(x) * (root * root - 1.0)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Rewards clipped to `[-1, 1]`, plain discounted recursion.
    Clip,
    /// Raw rewards through the transformed Bellman recursion.
    Tb,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip" => Ok(TargetMode::Clip),
            "tb" => Ok(TargetMode::Tb),
            _ => Err(Error::input(format!("unknown target mode `{s}` (clip|tb)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TbConfig {
    pub epsilon: f64,
    /// Sum `h` over the individual discounted rewards instead of nesting
    /// the recursion.
    pub literal_sum: bool,
}

impl Default for TbConfig {
    fn default() -> Self {
        TbConfig {
            epsilon: 1e-2,
            literal_sum: false,
        }
    }
}

/// Rewards and bootstrap of one worker segment. States live alongside in
/// the worker; only the pieces the targets depend on are kept here.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub actions: Vec<usize>,
    /// Raw (unclipped) rewards.
    pub rewards: Vec<f64>,
    /// Whether the last transition ended the episode.
    pub terminal: bool,
    /// `V(s_{t+n})`, or 0 after a terminal transition.
    pub bootstrap: f64,
    pub worker: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.rewards.is_empty() {
            return Err(Error::input("empty rollout"));
        }
        if self.rewards.len() > t_max || self.actions.len() != self.rewards.len() {
            return Err(Error::input(format!(
                "rollout of {} rewards / {} actions exceeds t_max {t_max} or is misaligned",
                self.rewards.len(),
                self.actions.len()
            )));
        }
        if self.terminal && self.bootstrap != 0.0 {
            return Err(Error::input("terminal rollout must bootstrap from 0"));
        }
        if !self.bootstrap.is_finite() || self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("rollout rewards".into()));
        }
        Ok(())
    }
}

/// Per-step n-step targets, computed backwards from the bootstrap value.
pub fn n_step_targets(rewards: &[f64], bootstrap: f64, gamma: f64, mode: TargetMode, tb: &TbConfig) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::input("empty rollout"));
    }
    let n = rewards.len();
    let mut targets = vec![0.0; n];
    match (mode, tb.literal_sum) {
        (TargetMode::Clip, _) => {
            let mut r = bootstrap;
            for t in (0..n).rev() {
                r = rewards[t].clamp(-1.0, 1.0) + gamma * r;
                targets[t] = r;
            }
        }
        (TargetMode::Tb, false) => {
            let mut r = bootstrap;
            for t in (0..n).rev() {
                r = h(rewards[t] + gamma * h_inv(r, tb.epsilon), tb.epsilon);
                targets[t] = r;
            }
        }
        (TargetMode::Tb, true) => {
            let tail = h_inv(bootstrap, tb.epsilon);
            for (t, target) in targets.iter_mut().enumerate() {
                let steps = n - t;
                let carry = gamma.powi(steps as i32) * tail;
                *target = (0..steps)
                    .map(|k| h(gamma.powi(k as i32) * rewards[t + k] + carry, tb.epsilon))
                    .sum();
            }
        }
    }
    Ok(targets)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub entropy_beta: f64,
    pub value_coef: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            entropy_beta: 0.01,
            value_coef: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct A3cLoss<T: Scalar = f32> {
    /// `sum_t [-log pi(a_t) A_t - beta H_t + c (Q_t - V_t)^2]`.
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub advantages: Vec<f64>,
    pub grads: ParamSet<T>,
}

/// Combined actor-critic objective over a batch of states `[n, C, H, W]`.
/// Advantages are computed from the same forward pass and held constant.
pub fn a3c_losses<T: Scalar>(
    graph: &mut ComputeGraph<T>,
    states: &Tensor<T>,
    actions: &[usize],
    targets: &[f64],
    weights: LossWeights,
) -> Result<A3cLoss<T>> {
    if !graph.has_value_head() {
        return Err(Error::config("actor-critic loss needs a value head"));
    }
    let out = graph.forward(states)?;
    let n = out.logits.shape()[0];
    let k = out.logits.shape()[1];
    if actions.len() != n || targets.len() != n {
        return Err(Error::input(format!(
            "{n} states, {} actions, {} targets",
            actions.len(),
            targets.len()
        )));
    }
    let values = out.value.expect("value head present");
    let mut logit_grad = Tensor::zeros(&[n, k]);
    let mut value_grad = Tensor::zeros(&[n]);
    let (mut policy, mut value, mut ent) = (0.0, 0.0, 0.0);
    let mut advantages = Vec::with_capacity(n);
    let beta = T::of(weights.entropy_beta);
    let c = T::of(weights.value_coef);
    for t in 0..n {
        let v = values.data()[t];
        let q = T::of(targets[t]);
        let adv = q - v;
        advantages.push(adv.as_f64());
        let row = out.logits.row(t);
        let pg = policy_gradient(row, actions[t], adv)?;
        let h = entropy(row);
        let mse = value_mse(v, q);
        policy += pg.loss.as_f64();
        ent += h.loss.as_f64();
        value += mse.loss.as_f64();
        for ((g, p), e) in logit_grad.data_mut()[t * k..(t + 1) * k].iter_mut().zip(&pg.grad).zip(&h.grad) {
            *g = *p - beta * *e;
        }
        value_grad.data_mut()[t] = c * mse.grad[0];
    }
    let grads = graph
        .backward(&OutputGrad {
            logits: logit_grad,
            value: Some(value_grad),
        })?
        .params;
    Ok(A3cLoss {
        total: policy - weights.entropy_beta * ent + weights.value_coef * value,
        policy,
        value,
        entropy: ent,
        advantages,
        grads,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct A3cConfig {
    pub workers: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub loss: LossWeights,
    pub max_grad_norm: f64,
    pub rmsprop: RmsPropConfig,
    /// Linearly anneal the learning rate to zero over the step budget.
    pub lr_decay: bool,
    pub target: TargetMode,
    pub tb: TbConfig,
    /// Environment steps summed over all workers.
    pub step_budget: u64,
    pub eval_interval: u64,
    /// Agent steps per evaluation.
    pub eval_steps: u64,
    pub seed: u64,
    /// Stop once an evaluation reaches this score.
    pub early_stop_score: Option<f64>,
}

impl Default for A3cConfig {
    fn default() -> Self {
        A3cConfig {
            workers: 8,
            t_max: 20,
            gamma: 0.99,
            loss: LossWeights::default(),
            max_grad_norm: 0.5,
            rmsprop: RmsPropConfig::default(),
            lr_decay: false,
            target: TargetMode::Clip,
            tb: TbConfig::default(),
            step_budget: 2_000_000,
            eval_interval: 10_000,
            eval_steps: 2_000,
            seed: 0,
            early_stop_score: None,
        }
    }
}

impl A3cConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.t_max == 0 || self.eval_interval == 0 || self.eval_steps == 0 {
            return Err(Error::config("workers, t_max, eval_interval and eval_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tb.epsilon > 0.0) {
            return Err(Error::config("tb.epsilon must be positive"));
        }
        if !(self.max_grad_norm > 0.0) || !(self.rmsprop.learning_rate > 0.0) {
            return Err(Error::config("max_grad_norm and learning_rate must be positive"));
        }
        if !(self.loss.entropy_beta >= 0.0) || !(self.loss.value_coef >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// A parameter set frozen at an evaluation point.
#[derive(Clone, Debug)]
pub struct EvalSnapshot {
    pub point: usize,
    pub step: u64,
    pub params: ParamSet,
}

struct Master {
    params: ParamSet,
    optimizer: RmsPropState,
    step: u64,
    updates: u64,
    next_eval: u64,
}

/// Master parameters and optimizer state shared by all workers.
pub struct SharedParams {
    master: RwLock<Master>,
    global_step: AtomicU64,
    budget: u64,
    eval_interval: u64,
    lr: f64,
    lr_decay: bool,
    snapshots: Mutex<Option<mpsc::Sender<EvalSnapshot>>>,
}

impl SharedParams {
    pub fn new(params: ParamSet, config: &A3cConfig) -> Self {
        let optimizer = RmsPropState::new(config.rmsprop.clone(), &params);
        SharedParams {
            master: RwLock::new(Master {
                params,
                optimizer,
                step: 0,
                updates: 0,
                next_eval: config.eval_interval,
            }),
            global_step: AtomicU64::new(0),
            budget: config.step_budget,
            eval_interval: config.eval_interval,
            lr: config.rmsprop.learning_rate,
            lr_decay: config.lr_decay,
            snapshots: Mutex::new(None),
        }
    }

    pub fn global_step(&self) -> u64 {
        self.global_step.load(Ordering::Acquire)
    }

    pub fn updates(&self) -> u64 {
        self.master.read().expect("master lock").updates
    }

    /// Copies the master parameters into `local`.
    pub fn pull(&self, local: &mut ComputeGraph) -> Result<()> {
        let master = self.master.read().expect("master lock");
        local.set_params(&master.params)
    }

    pub fn params(&self) -> ParamSet {
        self.master.read().expect("master lock").params.clone()
    }

    fn connect(&self, tx: mpsc::Sender<EvalSnapshot>) {
        *self.snapshots.lock().expect("snapshot lock") = Some(tx);
    }

    fn disconnect(&self) {
        self.snapshots.lock().expect("snapshot lock").take();
    }

    /// Applies one worker update and accounts for `steps` environment steps.
    /// Evaluation points crossed by this update are snapshotted while the
    /// write lock is held. A `None` gradient only advances the counter.
    pub fn apply(&self, grads: Option<&ParamSet>, steps: u64) -> Result<()> {
        let mut master = self.master.write().expect("master lock");
        if let Some(grads) = grads {
            let lr = if self.lr_decay && self.budget > 0 {
                self.lr * (1.0 - master.step as f64 / self.budget as f64).max(0.0)
            } else {
                self.lr
            };
            let Master { params, optimizer, .. } = &mut *master;
            optimizer.step_with_lr(params, grads, lr)?;
            master.updates += 1;
        }
        master.step += steps;
        self.global_step.store(master.step, Ordering::Release);
        while master.next_eval <= master.step && master.next_eval <= self.budget {
            let snapshot = EvalSnapshot {
                point: (master.next_eval / self.eval_interval) as usize,
                step: master.next_eval,
                params: master.params.clone(),
            };
            if let Some(tx) = self.snapshots.lock().expect("snapshot lock").as_ref() {
                let _ = tx.send(snapshot);
            }
            master.next_eval += self.eval_interval;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker: usize,
    pub steps: u64,
    pub rollouts: u64,
    pub skipped_updates: u64,
    pub max_rollout: usize,
    pub games_finished: u64,
    /// Raw score of the most recent finished game.
    pub last_game_score: Option<f64>,
}

/// Samples an action from the softmax of `logits`.
pub fn sample_action<T: Scalar, R: Rng + ?Sized>(logits: &[T], rng: &mut R) -> usize {
    let probs: Vec<f64> = softmax(logits).into_iter().map(|p| p.as_f64()).collect();
    match WeightedIndex::new(&probs) {
        Ok(dist) => dist.sample(rng),
        Err(_) => rng.random_range(0..logits.len()),
    }
}

/// One actor-learner: pull, act for up to `t_max` steps, compute targets and
/// gradients, clip, push. Runs until the shared step budget is reached.
pub fn worker_loop(
    worker: usize,
    shared: &SharedParams,
    mut local: ComputeGraph,
    env: &mut WrappedEnv,
    config: &A3cConfig,
    stop: &AtomicBool,
    on_rollout: &mut dyn FnMut(&Rollout),
) -> Result<WorkerStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(config.seed, worker));
    let mut stats = WorkerStats {
        worker,
        ..Default::default()
    };
    let [c, hgt, wid] = local.input_shape();
    let per = c * hgt * wid;
    let mut obs = env.reset()?;
    let mut game_score = 0.0;
    while shared.global_step() < config.step_budget && !stop.load(Ordering::Relaxed) {
        shared.pull(&mut local)?;
        let mut states = Vec::with_capacity(config.t_max * per);
        let mut rollout = Rollout {
            actions: Vec::with_capacity(config.t_max),
            rewards: Vec::with_capacity(config.t_max),
            terminal: false,
            bootstrap: 0.0,
            worker,
        };
        for _ in 0..config.t_max {
            let out = local.forward(&obs)?;
            let action = sample_action(out.logits.row(0), &mut rng);
            let step = env.step(action)?;
            states.extend_from_slice(obs.data());
            rollout.actions.push(action);
            rollout.rewards.push(step.reward);
            game_score += step.reward;
            if step.game_over || step.truncated {
                stats.games_finished += 1;
                stats.last_game_score = Some(game_score);
                game_score = 0.0;
            }
            if step.terminal {
                rollout.terminal = true;
                obs = env.reset()?;
                break;
            }
            obs = step.observation;
        }
        if !rollout.terminal {
            let out = local.forward(&obs)?;
            rollout.bootstrap = out.value.expect("value head").data()[0] as f64;
        }
        rollout.validate(config.t_max)?;
        on_rollout(&rollout);
        let n = rollout.len();
        let targets = n_step_targets(&rollout.rewards, rollout.bootstrap, config.gamma, config.target, &config.tb)?;
        let batch = Tensor::from_vec(&[n, c, hgt, wid], states)?;
        let mut loss = a3c_losses(&mut local, &batch, &rollout.actions, &targets, config.loss)?;
        clip_global_norm(&mut loss.grads, config.max_grad_norm);
        stats.steps += n as u64;
        stats.rollouts += 1;
        stats.max_rollout = stats.max_rollout.max(n);
        if loss.grads.is_finite() && loss.total.is_finite() {
            shared.apply(Some(&loss.grads), n as u64)?;
        } else {
            stats.skipped_updates += 1;
            tracing::warn!(worker, "non-finite gradients; update skipped");
            shared.apply(None, n as u64)?;
        }
    }
    Ok(stats)
}

fn worker_seed(seed: u64, worker: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(worker as u64 + 1)
}

fn eval_seed(seed: u64, point: usize) -> u64 {
    seed.wrapping_mul(0xd134_2543_de82_ef95)
        .wrapping_add(0x1000_0000 + point as u64)
}

/// How the master parameters start out.
#[derive(Clone, Debug)]
pub enum TrainInit {
    Random,
    /// Layers of a pre-trained classifier; `tracked_max` normalizes the
    /// output layer when the whole network is reused.
    Pretrained {
        params: ParamSet,
        layers: LayerSet,
        tracked_max: Option<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub game: GameConfig,
    pub wrapper: WrapperConfig,
    pub network: NetworkConfig,
    pub a3c: A3cConfig,
    pub init: TrainInit,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub initial_params: ParamSet,
    pub final_params: ParamSet,
    pub global_step: u64,
    pub updates: u64,
    pub workers: Vec<WorkerStats>,
    pub elapsed: Duration,
    pub stopped_early: bool,
    /// Set when the run was aborted; the curve holds the points reached.
    pub error: Option<String>,
    /// The frozen parameters scored at each evaluation point, by step.
    pub snapshots: Vec<(u64, ParamSet)>,
}

/// Initial master parameters for a setup.
pub fn initial_params(setup: &TrainSetup) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.a3c.seed);
    let mut graph = build_policy_value(&setup.network, &mut rng)?;
    if let TrainInit::Pretrained {
        params,
        layers,
        tracked_max,
    } = &setup.init
    {
        transfer_layers(params, &mut graph, *layers, *tracked_max)?;
    }
    Ok(graph.params().clone())
}

fn eval_env(setup: &TrainSetup, point: usize) -> Result<WrappedEnv> {
    WrappedEnv::new(
        make_game(&setup.game)?,
        setup.wrapper.for_evaluation(),
        eval_seed(setup.a3c.seed, point),
    )
}

/// Scores a parameter set the way training evaluation points are scored.
pub fn evaluate_point(setup: &TrainSetup, params: &ParamSet, point: usize) -> Result<f64> {
    let mut graph = ComputeGraph::zeroed(setup.network.graph_spec(true))?;
    graph.set_params(params)?;
    let mut env = eval_env(setup, point)?;
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed(setup.a3c.seed, point) ^ 0xe7a1);
    Ok(evaluate_policy(&mut graph, &mut env, setup.a3c.eval_steps, &mut rng)?.mean_score)
}

/// Runs `workers` actor-learners against shared parameters, evaluating a
/// frozen snapshot every `eval_interval` global steps on a separate thread.
pub fn train(setup: &TrainSetup) -> Result<TrainOutcome> {
    let config = &setup.a3c;
    config.validate()?;
    setup.game.validate()?;
    setup.network.validate()?;
    let probe = WrappedEnv::new(make_game(&setup.game)?, setup.wrapper.clone(), 0)?;
    if probe.action_count() != setup.network.actions || probe.observation_shape() != setup.network.graph_spec(true).input {
        return Err(Error::config(format!(
            "network expects {:?} with {} actions; environment gives {:?} with {}",
            setup.network.graph_spec(true).input,
            setup.network.actions,
            probe.observation_shape(),
            probe.action_count()
        )));
    }
    let started = Instant::now();
    let initial = initial_params(setup)?;
    let shared = SharedParams::new(initial.clone(), config);
    let stop = AtomicBool::new(false);
    let stopped_early = AtomicBool::new(false);
    let mut curve = LearningCurve::new(config.eval_interval);
    if config.step_budget == 0 {
        return Ok(TrainOutcome {
            curve,
            final_params: initial.clone(),
            initial_params: initial,
            global_step: 0,
            updates: 0,
            workers: Vec::new(),
            elapsed: started.elapsed(),
            stopped_early: false,
            error: None,
            snapshots: Vec::new(),
        });
    }
    let (tx, rx) = mpsc::channel::<EvalSnapshot>();
    tx.send(EvalSnapshot {
        point: 0,
        step: 0,
        params: initial.clone(),
    })
    .expect("receiver alive");
    shared.connect(tx);

    let (worker_results, eval_result) = std::thread::scope(|scope| {
        let evaluator = scope.spawn(|| -> Result<Vec<(u64, f64, ParamSet)>> {
            let mut points = Vec::new();
            for snap in rx {
                if stop.load(Ordering::Relaxed) && !stopped_early.load(Ordering::Relaxed) {
                    break;
                }
                let score = evaluate_point(setup, &snap.params, snap.point)?;
                tracing::info!(step = snap.step, score, "evaluation");
                points.push((snap.step, score, snap.params));
                if config.early_stop_score.is_some_and(|target| score >= target) {
                    stopped_early.store(true, Ordering::Relaxed);
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
            }
            Ok(points)
        });
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let shared = &shared;
                let stop = &stop;
                scope.spawn(move || -> Result<WorkerStats> {
                    let run = || -> Result<WorkerStats> {
                        let mut env = WrappedEnv::new(
                            make_game(&setup.game)?,
                            setup.wrapper.clone(),
                            worker_seed(config.seed, w) ^ 0xe4f,
                        )?;
                        let local = ComputeGraph::zeroed(setup.network.graph_spec(true))?;
                        worker_loop(w, shared, local, &mut env, config, stop, &mut |_| {})
                    };
                    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
                        .unwrap_or_else(|_| Err(Error::state(format!("worker {w} panicked"))));
                    if result.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    result
                })
            })
            .collect();
        let results: Vec<Result<WorkerStats>> = handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| {
                    stop.store(true, Ordering::Relaxed);
                    Err(Error::state("worker thread panicked"))
                })
            })
            .collect();
        shared.disconnect();
        let evaluated = evaluator
            .join()
            .unwrap_or_else(|_| Err(Error::state("evaluation thread panicked")));
        (results, evaluated)
    });

    let mut error = None;
    let mut workers = Vec::new();
    for r in worker_results {
        match r {
            Ok(s) => workers.push(s),
            Err(e) => {
                error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let mut snapshots = Vec::new();
    match eval_result {
        Ok(points) => {
            for (step, score, params) in points {
                curve.push(step, score)?;
                snapshots.push((step, params));
            }
        }
        Err(e) => {
            error.get_or_insert_with(|| e.to_string());
        }
    }
    Ok(TrainOutcome {
        curve,
        initial_params: initial,
        final_params: shared.params(),
        global_step: shared.global_step(),
        updates: shared.updates(),
        workers,
        elapsed: started.elapsed(),
        stopped_early: stopped_early.load(Ordering::Relaxed),
        error,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_examples() {
        assert_eq!(h(0.0, 0.01), 0.0);
        assert!((h(3.0, 0.01) - 1.03).abs() < 1e-12);
        assert!((h_inv(1.03, 0.01) - 3.0).abs() < 1e-9);
        assert_eq!(h_inv(0.0, 0.01), 0.0);
        for z in [-7.5, -0.3, 0.2, 12.0] {
            assert_eq!(h(-z, 0.01), -h(z, 0.01));
        }
    }

    #[test]
    fn clip_targets_by_hand() {
        let t = n_step_targets(&[1.0, 1.0], 10.0, 0.9, TargetMode::Clip, &TbConfig::default()).unwrap();
        assert!((t[0] - (1.0 + 0.9 + 0.81 * 10.0)).abs() < 1e-12);
        assert!((t[1] - (1.0 + 0.9 * 10.0)).abs() < 1e-12);
        let clipped = n_step_targets(&[5.0, -3.0], 0.0, 1.0, TargetMode::Clip, &TbConfig::default()).unwrap();
        assert_eq!(clipped, vec![0.0, -1.0]);
    }

    #[test]
    fn tb_single_terminal_step() {
        let t = n_step_targets(&[3.0], 0.0, 0.99, TargetMode::Tb, &TbConfig::default()).unwrap();
        assert!((t[0] - 1.03).abs() < 1e-12);
        let zero = n_step_targets(&[0.0; 5], 0.0, 0.99, TargetMode::Tb, &TbConfig::default()).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn literal_sum_differs_from_nested() {
        let tb = TbConfig {
            literal_sum: true,
            ..Default::default()
        };
        let literal = n_step_targets(&[1.0, 10.0], 2.0, 0.9, TargetMode::Tb, &tb).unwrap();
        let nested = n_step_targets(&[1.0, 10.0], 2.0, 0.9, TargetMode::Tb, &TbConfig::default()).unwrap();
        let e = 0.01;
        let tail = h_inv(2.0, e);
        let expect0 = h(1.0 + 0.81 * tail, e) + h(0.9 * 10.0 + 0.81 * tail, e);
        assert!((literal[0] - expect0).abs() < 1e-12);
        assert!((literal[1] - nested[1]).abs() < 1e-12);
        assert!((literal[0] - nested[0]).abs() > 1e-3);
    }

    #[test]
    fn empty_rollout_is_input_error() {
        assert!(n_step_targets(&[], 0.0, 0.9, TargetMode::Clip, &TbConfig::default()).is_err());
        let r = Rollout {
            actions: vec![],
            rewards: vec![],
            terminal: false,
            bootstrap: 0.0,
            worker: 0,
        };
        assert!(r.validate(20).is_err());
    }

    #[test]
    fn rollout_invariants() {
        let r = Rollout {
            actions: vec![0; 3],
            rewards: vec![0.0; 3],
            terminal: true,
            bootstrap: 0.5,
            worker: 0,
        };
        assert!(r.validate(20).is_err());
        assert!(r.validate(2).is_err());
        let ok = Rollout { bootstrap: 0.0, ..r };
        assert!(ok.validate(20).is_ok());
    }
}
