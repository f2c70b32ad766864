//! Advantage actor-critic training.
//!
//! Each update consumes one rollout of `rollout_len` jobs. Targets
//! `r + gamma * V(s')` and advantages `target - V(s)` are computed with the
//! critic as it was before the update; the actor then ascends
//! `sum_k A_k * grad log pi(s_k, a_k) + beta * grad H(pi(s_k))` and the critic
//! descends `sum_k (target_k - V(s_k))^2`.
//!
//! Training runs an entropy schedule stage by stage. Every stage restarts the
//! optimizer from the previous stage's parameters and ends with a checkpoint;
//! the last stage must use weight 0 and yields the final policy.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::{
    self, apply_update, ActorParams, Arch, Checkpoint, CheckpointMeta, CriticParams, Direction,
    FeatureScale, Gradient, OptimizerKind, OptimizerState,
};
use crate::rng;
use crate::schedulers::sample_categorical;
use crate::traces::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyStage {
    pub weight: f64,
    pub episodes: usize,
}

/// `[5, 2, 1, 0.5, 0.1, 0]`, each stage running `episodes` episodes.
pub fn default_entropy_schedule(episodes: usize) -> Vec<EntropyStage> {
    [5.0, 2.0, 1.0, 0.5, 0.1, 0.0]
        .into_iter()
        .map(|weight| EntropyStage { weight, episodes })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_schedule: Vec<EntropyStage>,
    /// Jobs per episode.
    pub episode_len: usize,
    /// Jobs per update.
    pub rollout_len: usize,
    pub workers: usize,
    /// Supplied at run time rather than from configuration files.
    #[serde(skip)]
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Rewards are multiplied by this before they reach the critic and the
    /// advantages.
    pub reward_scale: f64,
    pub arch: Arch,
}

/// Defaults follow the reference experiment, except RMSProp and a 1e-3
/// reward scale: with plain gradient steps and raw millisecond rewards the
/// softmax saturates early and training stalls on a single sensor.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.9,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            entropy_schedule: default_entropy_schedule(500),
            episode_len: 500,
            rollout_len: 50,
            workers: 1,
            seed: 0,
            optimizer: OptimizerKind::rms_prop(),
            reward_scale: 1e-3,
            arch: Arch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward_scale must be > 0, got {}", self.reward_scale));
        }
        let Some(last) = self.entropy_schedule.last() else {
            return bad("entropy schedule is empty".into());
        };
        if last.weight != 0.0 {
            return bad(format!("final entropy weight must be 0, got {}", last.weight));
        }
        for pair in self.entropy_schedule.windows(2) {
            if pair[1].weight > pair[0].weight {
                return bad("entropy weights must be non-increasing".into());
            }
        }
        if self.entropy_schedule.iter().any(|s| !(s.weight >= 0.0) || s.episodes == 0) {
            return bad("entropy stages need weight >= 0 and at least one episode".into());
        }
        if self.rollout_len == 0 || self.rollout_len > self.episode_len {
            return bad(format!(
                "rollout_len must lie in [1, episode_len = {}], got {}",
                self.episode_len, self.rollout_len
            ));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    /// `V(s_k)` under the critic used for the targets.
    pub value: f64,
    pub target: f64,
    pub advantage: f64,
}

impl Transition {
    pub fn new(obs: Observation, action: usize, reward: f64, next_obs: Observation) -> Self {
        Transition {
            obs,
            action,
            reward,
            next_obs,
            value: 0.0,
            target: 0.0,
            advantage: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Runs `len` jobs, sampling each action from the actor.
pub fn rollout(
    env: &mut Env,
    actor: &ActorParams,
    scale: &FeatureScale,
    len: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut records = Vec::with_capacity(len);
    let mut obs = env.observe();
    for _ in 0..len {
        let x = nn::featurize(&obs, scale, actor.shape())?;
        let act = nn::forward(&actor.0, &x);
        let (probs, _) = nn::softmax(act.output());
        if !probs.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("policy probabilities".into()));
        }
        let action = sample_categorical(&probs, rng);
        let step = env.step(action)?;
        records.push(Transition::new(obs, action, step.reward, step.observation.clone()));
        obs = step.observation;
    }
    Ok(Trajectory { records })
}

/// Fills values, TD targets and advantages. The last record bootstraps from
/// `V(s_{K})`: episodes are truncations, never terminal.
pub fn compute_advantages(
    traj: &mut Trajectory,
    critic: &CriticParams,
    scale: &FeatureScale,
    gamma: f64,
    reward_scale: f64,
) -> Result<()> {
    let shape = critic.shape();
    let value = |obs: &Observation| -> Result<f64> {
        let x = nn::featurize(obs, scale, shape)?;
        let v = nn::forward(&critic.0, &x).output()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("critic value".into()))
        }
    };
    let mut next_values = Vec::with_capacity(traj.len());
    let mut values = Vec::with_capacity(traj.len());
    for (k, rec) in traj.records.iter().enumerate() {
        values.push(value(&rec.obs)?);
        if k > 0 {
            next_values.push(values[k]);
        }
    }
    if let Some(last) = traj.records.last() {
        next_values.push(value(&last.next_obs)?);
    }
    for ((rec, v), v_next) in traj.records.iter_mut().zip(values).zip(next_values) {
        rec.value = v;
        rec.target = reward_scale * rec.reward + gamma * v_next;
        rec.advantage = rec.target - v;
    }
    Ok(())
}

/// `sum_k A_k * grad log pi(s_k, a_k) + beta * grad H(pi(s_k))`.
pub fn actor_gradient(actor: &ActorParams, traj: &Trajectory, scale: &FeatureScale, beta: f64) -> Result<Gradient> {
    let mut g = Gradient::zeros(*actor.shape());
    for rec in &traj.records {
        let x = nn::featurize(&rec.obs, scale, actor.shape())?;
        let act = nn::forward(&actor.0, &x);
        let (p, lp) = nn::softmax(act.output());
        let d = nn::policy_logit_grad(&p, &lp, rec.action, rec.advantage, beta);
        nn::backward_into(&actor.0, &x, &act, &d, &mut g);
    }
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite("actor gradient".into()))
    }
}

/// `sum_k grad (target_k - V(s_k))^2` at the current critic.
pub fn critic_gradient(critic: &CriticParams, traj: &Trajectory, scale: &FeatureScale) -> Result<Gradient> {
    let mut g = Gradient::zeros(*critic.shape());
    for rec in &traj.records {
        let x = nn::featurize(&rec.obs, scale, critic.shape())?;
        let act = nn::forward(&critic.0, &x);
        let d = -2.0 * (rec.target - act.output()[0]);
        nn::backward_into(&critic.0, &x, &act, &[d], &mut g);
    }
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite("critic gradient".into()))
    }
}

fn checked_apply(
    params: &mut nn::Weights,
    grad: &Gradient,
    lr: f64,
    opt: &mut OptimizerState,
    direction: Direction,
    what: &str,
) -> Result<()> {
    let mut next = params.clone();
    let mut next_opt = opt.clone();
    apply_update(&mut next, grad, lr, &mut next_opt, direction)?;
    if !next.is_finite() {
        return Err(Error::NonFinite(format!("{what} parameters after update")));
    }
    *params = next;
    *opt = next_opt;
    Ok(())
}

/// One policy-gradient ascent step over a trajectory with advantages.
pub fn actor_step(
    actor: &mut ActorParams,
    traj: &Trajectory,
    scale: &FeatureScale,
    lr: f64,
    beta: f64,
    opt: &mut OptimizerState,
) -> Result<()> {
    let g = actor_gradient(actor, traj, scale, beta)?;
    checked_apply(&mut actor.0, &g, lr, opt, Direction::Ascend, "actor")
}

/// One descent step on the summed squared TD error.
pub fn critic_step(
    critic: &mut CriticParams,
    traj: &Trajectory,
    scale: &FeatureScale,
    lr: f64,
    opt: &mut OptimizerState,
) -> Result<()> {
    let g = critic_gradient(critic, traj, scale)?;
    checked_apply(&mut critic.0, &g, lr, opt, Direction::Descend, "critic")
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: usize,
    pub beta: f64,
    pub episode: usize,
    pub mean_reward: f64,
    /// Mean over jobs and sensors of the post-job ages.
    pub mean_aoi: f64,
    pub violations_total: u64,
}

pub fn write_learning_curve(rows: &[LogRow], writer: impl std::io::Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::io("<learning curve>", e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// One checkpoint per entropy stage, in schedule order.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Training stopped early; `last_good` holds the newest finite parameters.
#[derive(Debug, thiserror::Error)]
#[error("training aborted in stage {stage}: {source}")]
pub struct TrainFailure {
    pub stage: usize,
    #[source]
    pub source: Error,
    pub last_good: Option<Box<Checkpoint>>,
    pub partial: TrainOutcome,
}

/// Feature scaling used for a set of training traces: ages in units of
/// 100 ms, throughput relative to the average of the traces' mean rates.
pub fn feature_scale_for(traces: &[Arc<Trace>]) -> FeatureScale {
    let mean = traces.iter().map(|t| t.mean_rate()).sum::<f64>() / traces.len().max(1) as f64;
    FeatureScale::for_mean_rate(mean)
}

struct Shared {
    actor: ActorParams,
    critic: CriticParams,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    rows: Vec<LogRow>,
}

struct StageCtx<'a> {
    env_config: &'a EnvConfig,
    traces: &'a [Arc<Trace>],
    cfg: &'a TrainConfig,
    scale: FeatureScale,
    stage: usize,
    beta: f64,
    /// Global index of this stage's first episode, for stream derivation.
    episode_base: usize,
}

fn run_episode(ctx: &StageCtx<'_>, shared: &Mutex<Shared>, episode: usize) -> Result<LogRow> {
    let cfg = ctx.cfg;
    let global = (ctx.episode_base + episode) as u64;
    let mut pick = rng::stream(cfg.seed, "episode-start", global);
    let trace = ctx.traces[pick.random_range(0..ctx.traces.len())].clone();
    let offset = pick.random_range(0.0..trace.duration());
    let mut env = Env::new(ctx.env_config.clone(), trace)?;
    env.reset(rng::derive_seed(cfg.seed, "episode-env", global), offset);
    let mut actions = rng::stream(cfg.seed, "episode-actions", global);

    let n = ctx.env_config.num_sensors() as f64;
    let (mut reward_sum, mut age_sum, mut violations) = (0.0, 0.0, 0u64);
    let mut done = 0;
    while done < cfg.episode_len {
        let len = cfg.rollout_len.min(cfg.episode_len - done);
        let (actor, critic) = {
            let s = shared.lock().expect("trainer state poisoned");
            (s.actor.clone(), s.critic.clone())
        };
        let mut traj = rollout(&mut env, &actor, &ctx.scale, len, &mut actions)?;
        compute_advantages(&mut traj, &critic, &ctx.scale, cfg.gamma, cfg.reward_scale)?;
        let g_actor = actor_gradient(&actor, &traj, &ctx.scale, ctx.beta)?;
        let g_critic = critic_gradient(&critic, &traj, &ctx.scale)?;
        {
            let mut guard = shared.lock().expect("trainer state poisoned");
            let s = &mut *guard;
            checked_apply(&mut s.actor.0, &g_actor, cfg.actor_lr, &mut s.actor_opt, Direction::Ascend, "actor")?;
            checked_apply(
                &mut s.critic.0,
                &g_critic,
                cfg.critic_lr,
                &mut s.critic_opt,
                Direction::Descend,
                "critic",
            )?;
        }
        for rec in &traj.records {
            reward_sum += rec.reward;
            age_sum += rec.next_obs.ages.iter().sum::<f64>() / n;
            violations += rec
                .next_obs
                .ages
                .iter()
                .zip(&ctx.env_config.sensors)
                .filter(|(a, s)| **a > s.threshold)
                .count() as u64;
        }
        done += len;
    }
    let jobs = cfg.episode_len as f64;
    Ok(LogRow {
        stage: ctx.stage,
        beta: ctx.beta,
        episode,
        mean_reward: reward_sum / jobs,
        mean_aoi: age_sum / jobs,
        violations_total: violations,
    })
}

fn run_stage(ctx: &StageCtx<'_>, shared: &Mutex<Shared>, episodes: usize) -> Result<()> {
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let worker = || {
        while !failed.load(Ordering::SeqCst) {
            let e = next.fetch_add(1, Ordering::SeqCst);
            if e >= episodes {
                break;
            }
            match run_episode(ctx, shared, e) {
                Ok(row) => shared.lock().expect("trainer state poisoned").rows.push(row),
                Err(err) => {
                    failed.store(true, Ordering::SeqCst);
                    first_error
                        .lock()
                        .expect("error slot poisoned")
                        .get_or_insert(err);
                }
            }
        }
    };
    if ctx.cfg.workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..ctx.cfg.workers {
                scope.spawn(worker);
            }
        });
    }
    match first_error.into_inner().expect("error slot poisoned") {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

/// Trains from scratch over the full entropy schedule.
pub fn train(env_config: &EnvConfig, traces: &[Arc<Trace>], cfg: &TrainConfig) -> Result<TrainOutcome, TrainFailure> {
    let fail = |source: Error| TrainFailure {
        stage: 0,
        source,
        last_good: None,
        partial: TrainOutcome {
            checkpoints: Vec::new(),
            log: Vec::new(),
        },
    };
    env_config.validate().map_err(fail)?;
    cfg.validate().map_err(fail)?;
    if traces.is_empty() {
        return Err(fail(Error::Config("at least one training trace is required".into())));
    }
    let n = env_config.num_sensors();
    let j = env_config.history_len;
    let scale = feature_scale_for(traces);
    let config_hash = env_config.config_hash();
    let actor = ActorParams::init(n, j, cfg.arch, cfg.seed).map_err(fail)?;
    let critic = CriticParams::init(n, j, cfg.arch, cfg.seed).map_err(fail)?;
    let shared = Mutex::new(Shared {
        actor,
        critic,
        actor_opt: OptimizerState::new(cfg.optimizer),
        critic_opt: OptimizerState::new(cfg.optimizer),
        rows: Vec::new(),
    });
    let snapshot = |shared: &Mutex<Shared>, stage: usize| {
        let s = shared.lock().expect("trainer state poisoned");
        Checkpoint {
            meta: CheckpointMeta {
                n_sensors: n,
                history_len: j,
                filters: cfg.arch.filters,
                kernel: cfg.arch.kernel,
                hidden: cfg.arch.hidden,
                seed: cfg.seed,
                entropy_stage: stage,
                config_hash: config_hash.clone(),
                norm: scale,
            },
            actor: s.actor.clone(),
            critic: s.critic.clone(),
        }
    };

    let mut checkpoints = Vec::with_capacity(cfg.entropy_schedule.len());
    let mut log = Vec::new();
    let mut episode_base = 0;
    for (stage, st) in cfg.entropy_schedule.iter().enumerate() {
        {
            let mut s = shared.lock().expect("trainer state poisoned");
            s.actor_opt = OptimizerState::new(cfg.optimizer);
            s.critic_opt = OptimizerState::new(cfg.optimizer);
        }
        let ctx = StageCtx {
            env_config,
            traces,
            cfg,
            scale,
            stage,
            beta: st.weight,
            episode_base,
        };
        log::info!("stage {stage}: entropy weight {} for {} episodes", st.weight, st.episodes);
        let result = run_stage(&ctx, &shared, st.episodes);
        {
            let mut s = shared.lock().expect("trainer state poisoned");
            let mut rows = std::mem::take(&mut s.rows);
            rows.sort_by_key(|r| r.episode);
            if let Some(last) = rows.last() {
                log::info!(
                    "stage {stage} done: last episode mean reward {:.3}, mean AoI {:.3}",
                    last.mean_reward,
                    last.mean_aoi
                );
            }
            log.extend(rows);
        }
        if let Err(source) = result {
            return Err(TrainFailure {
                stage,
                source,
                last_good: Some(Box::new(snapshot(&shared, stage))),
                partial: TrainOutcome { checkpoints, log },
            });
        }
        checkpoints.push(snapshot(&shared, stage));
        episode_base += st.episodes;
    }
    Ok(TrainOutcome { checkpoints, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SensorConfig;
    use crate::nn::{NetShape, Weights};

    fn small_arch() -> Arch {
        Arch {
            filters: 4,
            kernel: 4,
            hidden: 8,
        }
    }

    fn small_env_config() -> EnvConfig {
        EnvConfig {
            sensors: vec![
                SensorConfig { packet_size: 100.0, threshold: 150.0, penalty: 1000.0 },
                SensorConfig { packet_size: 200.0, threshold: 600.0, penalty: 500.0 },
            ],
            success_prob: 0.9,
            history_len: 5,
            max_attempts: 64,
        }
    }

    fn obs(ages: &[f64]) -> Observation {
        Observation {
            ages: ages.to_vec(),
            recent_throughput: vec![1.0; 5],
            last_service_time: 1.0,
        }
    }

    #[test]
    fn empty_rollout() {
        let trace = Arc::new(Trace::constant(1.0).unwrap());
        let mut env = Env::new(small_env_config(), trace).unwrap();
        env.reset(0, 0.0);
        let actor = ActorParams::init(2, 5, small_arch(), 0).unwrap();
        let mut r = rng::stream(0, "t", 0);
        let t = rollout(&mut env, &actor, &FeatureScale::identity(), 0, &mut r).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn advantage_arithmetic() {
        // Critic with V = out.bias only: all weights zero, so V(s) = b.
        let shape = NetShape::critic(2, 5, small_arch());
        let mut w = Weights::zeros(shape);
        w.set_layer("out.bias", vec![10.0]).unwrap();
        let critic = CriticParams(w);
        let mut t = Trajectory {
            records: vec![Transition::new(obs(&[1.0, 2.0]), 0, -5.0, obs(&[3.0, 4.0]))],
        };
        compute_advantages(&mut t, &critic, &FeatureScale::identity(), 0.9, 1.0).unwrap();
        // target = -5 + 0.9 * 10 = 4; A = 4 - 10.
        assert_eq!(t.records[0].target, 4.0);
        assert_eq!(t.records[0].advantage, -6.0);

        compute_advantages(&mut t, &critic, &FeatureScale::identity(), 0.0, 1.0).unwrap();
        assert_eq!(t.records[0].advantage, -5.0 - 10.0);

        let zero = CriticParams(Weights::zeros(shape));
        let mut t = Trajectory {
            records: (0..5)
                .map(|k| Transition::new(obs(&[k as f64, 1.0]), 0, -(k as f64) * 3.0, obs(&[1.0, 1.0])))
                .collect(),
        };
        compute_advantages(&mut t, &zero, &FeatureScale::identity(), 0.9, 1.0).unwrap();
        for rec in &t.records {
            assert_eq!(rec.advantage, rec.reward);
            assert_eq!(rec.advantage, rec.target - rec.value);
        }
    }

    #[test]
    fn zero_advantage_and_entropy_leave_actor_unchanged() {
        let mut actor = ActorParams::init(2, 5, small_arch(), 3).unwrap();
        let before = actor.clone();
        let t = Trajectory {
            records: vec![Transition::new(obs(&[1.0, 2.0]), 1, -3.0, obs(&[2.0, 1.0]))],
        };
        let mut opt = OptimizerState::new(OptimizerKind::Plain);
        actor_step(&mut actor, &t, &FeatureScale::identity(), 0.1, 0.0, &mut opt).unwrap();
        assert_eq!(actor, before);
    }

    #[test]
    fn critic_unchanged_when_targets_match_values() {
        let mut critic = CriticParams::init(2, 5, small_arch(), 4).unwrap();
        let mut t = Trajectory {
            records: vec![Transition::new(obs(&[1.0, 2.0]), 1, 0.0, obs(&[2.0, 1.0]))],
        };
        compute_advantages(&mut t, &critic, &FeatureScale::identity(), 0.9, 1.0).unwrap();
        t.records[0].target = t.records[0].value;
        let before = critic.clone();
        let mut opt = OptimizerState::new(OptimizerKind::Plain);
        critic_step(&mut critic, &t, &FeatureScale::identity(), 0.1, &mut opt).unwrap();
        assert_eq!(critic, before);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.entropy_schedule[5].weight = 0.1;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.entropy_schedule[1].weight = 7.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.rollout_len = c.episode_len + 1;
        assert!(c.validate().is_err());
        let mut c = ok;
        c.workers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_emits_one_checkpoint_per_stage_with_annealed_log() {
        let traces = vec![Arc::new(Trace::constant(2.0).unwrap())];
        let cfg = TrainConfig {
            entropy_schedule: default_entropy_schedule(2),
            episode_len: 20,
            rollout_len: 7,
            arch: small_arch(),
            ..TrainConfig::default()
        };
        let out = train(&small_env_config(), &traces, &cfg).unwrap();
        assert_eq!(out.checkpoints.len(), 6);
        assert_eq!(out.log.len(), 12);
        let betas: Vec<f64> = out.log.iter().map(|r| r.beta).collect();
        assert!(betas.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*betas.last().unwrap(), 0.0);
        for (s, ck) in out.checkpoints.iter().enumerate() {
            assert_eq!(ck.meta.entropy_stage, s);
        }
        let mut buf = Vec::new();
        write_learning_curve(&out.log, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("stage,beta,episode,mean_reward,mean_aoi,violations_total\n"));
    }

    #[test]
    fn divergence_preserves_last_good_parameters() {
        let traces = vec![Arc::new(Trace::constant(2.0).unwrap())];
        let cfg = TrainConfig {
            entropy_schedule: default_entropy_schedule(3),
            episode_len: 50,
            rollout_len: 50,
            critic_lr: 1e30,
            optimizer: OptimizerKind::Plain,
            arch: small_arch(),
            ..TrainConfig::default()
        };
        let err = train(&small_env_config(), &traces, &cfg).unwrap_err();
        assert!(matches!(err.source, Error::NonFinite(_)), "{err}");
        let good = err.last_good.expect("last good checkpoint");
        assert!(good.actor.0.is_finite() && good.critic.0.is_finite());
    }

    #[test]
    fn multi_worker_training_completes() {
        let traces = vec![Arc::new(Trace::constant(2.0).unwrap()), Arc::new(Trace::constant(3.0).unwrap())];
        let cfg = TrainConfig {
            entropy_schedule: vec![
                EntropyStage { weight: 1.0, episodes: 4 },
                EntropyStage { weight: 0.0, episodes: 4 },
            ],
            episode_len: 30,
            rollout_len: 10,
            workers: 3,
            arch: small_arch(),
            ..TrainConfig::default()
        };
        let out = train(&small_env_config(), &traces, &cfg).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert_eq!(out.log.len(), 8);
        assert!(out.final_checkpoint().unwrap().actor.0.is_finite());
    }
}
