use super::{compute_gae, Hyperparams, TrainError};
use crate::env::EnvState;
use crate::geom::Action;
use crate::policy::{log_softmax, probs_from_logits, sample_index, PolicyParams};
use crate::scenario::ScenarioSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Base of the environment seeds used during training, disjoint from evaluation seeds.
pub const TRAIN_SEED_BASE: u64 = 1 << 48;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

/// Flat training batch with advantages and returns filled in.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub obs: Vec<f32>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Appends one (environment, agent) stream, computing its advantages.
    pub fn push_stream(
        &mut self,
        stream: &[Transition],
        last_value: f64,
        gamma: f64,
        lambda: f64,
    ) -> Result<(), TrainError> {
        let rewards: Vec<f64> = stream.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = stream.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = stream.iter().map(|t| t.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, last_value, gamma, lambda)?;
        for t in stream {
            self.obs.extend_from_slice(&t.obs);
            self.actions.push(t.action);
        }
        self.log_probs.extend(stream.iter().map(|t| t.log_prob));
        self.values.extend(values);
        self.rewards.extend(rewards);
        self.dones.extend(dones);
        self.advantages.extend(adv);
        self.returns.extend(ret);
        Ok(())
    }
}

/// Statistics of one finished training episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeEnd {
    pub reward: f64,
    pub success: bool,
    pub cycles: u64,
}

struct Slot {
    index: usize,
    env: EnvState,
    rng: ChaCha8Rng,
    episodes: u64,
    reward: f64,
    streams: Vec<Vec<Transition>>,
}

/// Vectorized environments stepped with a shared policy snapshot.
pub struct RolloutCollector {
    spec: ScenarioSpec,
    seed: u64,
    n_envs: usize,
    slots: Vec<Slot>,
}

impl RolloutCollector {
    pub fn new(spec: &ScenarioSpec, seed: u64, n_envs: usize) -> Result<Self, TrainError> {
        let mut slots = Vec::with_capacity(n_envs);
        for index in 0..n_envs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            let env = EnvState::create(spec, env_seed(seed, n_envs, index, 0))?;
            slots.push(Slot {
                index,
                streams: vec![Vec::new(); env.agents.len()],
                env,
                rng,
                episodes: 0,
                reward: 0.0,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            seed,
            n_envs,
            slots,
        })
    }

    /// Steps every environment `cycles` times and returns the merged batch in slot then agent order.
    pub fn collect(
        &mut self,
        params: &PolicyParams<f32>,
        cycles: usize,
        hp: &Hyperparams,
        workers: usize,
    ) -> Result<(Rollout, Vec<EpisodeEnd>), TrainError> {
        let workers = workers.clamp(1, self.slots.len());
        let per = self.slots.len().div_ceil(workers);
        let ctx = Ctx {
            spec: &self.spec,
            seed: self.seed,
            n_envs: self.n_envs,
            params,
        };
        let results: Vec<Result<Vec<EpisodeEnd>, TrainError>> = if workers == 1 {
            vec![run_slots(&ctx, &mut self.slots, cycles)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .slots
                    .chunks_mut(per)
                    .map(|chunk| {
                        let ctx = &ctx;
                        s.spawn(move || run_slots(ctx, chunk, cycles))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout worker panicked"))
                    .collect()
            })
        };
        let mut ends = Vec::new();
        for r in results {
            ends.extend(r?);
        }
        let mut rollout = Rollout::default();
        for slot in &mut self.slots {
            for agent in 0..slot.streams.len() {
                let stream = std::mem::take(&mut slot.streams[agent]);
                if stream.is_empty() {
                    continue;
                }
                let last_value = if stream.last().is_some_and(|t| !t.done) {
                    let obs = slot.env.observation(agent)?;
                    params.forward(&obs.values)?.value
                } else {
                    0.0
                };
                rollout.push_stream(&stream, last_value, hp.gamma, hp.gae_lambda)?;
            }
        }
        Ok((rollout, ends))
    }
}

fn env_seed(seed: u64, n_envs: usize, slot: usize, episode: u64) -> u64 {
    TRAIN_SEED_BASE
        .wrapping_add(seed.wrapping_mul(1 << 24))
        .wrapping_add(episode.wrapping_mul(n_envs as u64))
        .wrapping_add(slot as u64)
}

struct Ctx<'a> {
    spec: &'a ScenarioSpec,
    seed: u64,
    n_envs: usize,
    params: &'a PolicyParams<f32>,
}

fn run_slots(ctx: &Ctx<'_>, slots: &mut [Slot], cycles: usize) -> Result<Vec<EpisodeEnd>, TrainError> {
    let len = ctx.params.arch.input_len();
    let n_agents = ctx.spec.n_agents;
    let p = ctx.params.arch.n_actions;
    let mut ends = Vec::new();
    let mut batch = Vec::new();
    for _ in 0..cycles {
        for agent in 0..n_agents {
            let active: Vec<usize> = (0..slots.len())
                .filter(|&i| slots[i].env.agents[agent].alive && slots[i].env.outcome().is_none())
                .collect();
            if active.is_empty() {
                continue;
            }
            batch.clear();
            for &i in &active {
                batch.extend_from_slice(&slots[i].env.observation(agent)?.values);
            }
            let (logits, values) = ctx.params.evaluate(&batch, active.len())?;
            for (k, &i) in active.iter().enumerate() {
                let slot = &mut slots[i];
                let probs = probs_from_logits(&logits[k]);
                let a = sample_index(&probs, &mut slot.rng);
                let logp = log_softmax(&logits[k])[a];
                let action = Action::from_index(a)
                    .filter(|_| a < p)
                    .expect("policy width matches the action set");
                let out = slot.env.step_agent(agent, action)?;
                slot.reward += out.reward.total;
                slot.streams[agent].push(Transition {
                    obs: batch[k * len..(k + 1) * len].to_vec(),
                    action: a,
                    log_prob: logp,
                    value: values[k],
                    reward: out.reward.total,
                    done: out.died,
                });
            }
        }
        for slot in slots.iter_mut() {
            slot.env.end_cycle();
            let outcome = slot.env.outcome();
            if outcome.is_none() && slot.env.cycle < ctx.spec.max_cycles {
                continue;
            }
            for s in &mut slot.streams {
                if let Some(t) = s.last_mut() {
                    t.done = true;
                }
            }
            ends.push(EpisodeEnd {
                reward: slot.reward,
                success: outcome == Some(crate::env::Outcome::Success),
                cycles: slot.env.cycle,
            });
            slot.episodes += 1;
            slot.reward = 0.0;
            slot.env = EnvState::create(ctx.spec, env_seed(ctx.seed, ctx.n_envs, slot.index, slot.episodes))?;
        }
    }
    Ok(ends)
}
