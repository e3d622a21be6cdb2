use super::*;
use crate::envs::Transition;
use crate::nn::{Tape, LOG_STD_MIN};
use crate::replay::Layout;
use crate::rng::{stream, Stream};
use rand::Rng as _;

const OBS: usize = 2;
const LAYOUT: Layout = Layout { obs_dim: OBS, action_dim: 1, k_max: 4 };

fn rng(x: u64) -> Rng {
    stream(7, Stream::Custom(x))
}

fn hyper(a: usize, c: usize) -> HyperParams {
    HyperParams { a, c, h: 1.0, k: 1, g: -2.0 }
}

fn small_config() -> AgentConfig {
    AgentConfig { hidden: vec![16, 16], batch_size: 32, ..AgentConfig::aac() }
}

fn small_agent(config: AgentConfig) -> Agent {
    Agent::new(OBS, 1, hyper(1, 1), config, &mut rng(0)).unwrap()
}

fn random_transition(r: &mut Rng) -> Transition {
    let k = r.random_range(1..=LAYOUT.k_max);
    let mut rewards = vec![0.0; LAYOUT.k_max];
    for x in rewards.iter_mut().take(k) {
        *x = r.random_range(-2.0..2.0);
    }
    Transition {
        state: vec![r.random_range(-1.0..1.0), k as f64],
        action: vec![r.random_range(-1.0..1.0)],
        rewards,
        next_state: vec![r.random_range(-1.0..1.0), k as f64],
        done: r.random_bool(0.2),
        k,
    }
}

fn random_batch(r: &mut Rng, n: usize) -> Batch {
    let rows: Vec<Transition> = (0..n).map(|_| random_transition(r)).collect();
    Batch::from_transitions(LAYOUT, &rows).unwrap()
}

fn filled_buffer(n: usize) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(LAYOUT, 1000).unwrap();
    let mut r = rng(99);
    for _ in 0..n {
        b.push(&random_transition(&mut r)).unwrap();
    }
    b
}

/// Makes the actor output `(mean, log_std)` for every state.
fn pin_actor(agent: &mut Agent, mean: f64, log_std: f64) {
    let last = agent.actor.layers_mut().last_mut().unwrap();
    last.weight.iter_mut().for_each(|w| *w = 0.0);
    last.bias = vec![mean, log_std];
}

/// Makes a network output `value` for every input.
fn flatten(net: &mut DenseNet, value: f64) {
    let last = net.layers_mut().last_mut().unwrap();
    last.weight.iter_mut().for_each(|w| *w = 0.0);
    last.bias.iter_mut().for_each(|b| *b = value);
}

/// Sum over j with explicit powers, kept separate from `td_target`.
fn brute_force_target(rewards: &[f64], k: usize, done: bool, gamma: f64, offset: u32, boot: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..k {
        total += gamma.powi(j as i32) * rewards[j];
    }
    let d = if done { 1.0 } else { 0.0 };
    total + (1.0 - d) * gamma.powf((k + offset as usize) as f64) * boot
}

#[test]
fn td_target_worked_example() {
    let t = td_target(&[1.0, 0.5, 0.0], 2, false, 0.9, 1, 2.0);
    assert!((t - 2.908).abs() < 1e-12, "{t}");
}

#[test]
fn td_target_terminal_and_myopic_limits() {
    let r = [1.0, 0.5, 0.25];
    let t = td_target(&r, 3, true, 0.5, 1, 1e6);
    assert_eq!(t, 1.0 + 0.25 + 0.0625);
    let t = td_target(&r, 3, false, 1e-12, 1, 5.0);
    assert!((t - 1.0).abs() < 1e-9);
}

#[test]
fn td_target_matches_brute_force() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let k = r.random_range(1..=15);
        let mut rewards = vec![0.0; 15];
        for x in rewards.iter_mut().take(k) {
            *x = r.random_range(-10.0..10.0);
        }
        let gamma = r.random_range(0.6..0.999);
        let done = r.random_bool(0.5);
        let boot = r.random_range(-50.0..50.0);
        for offset in [0, 1] {
            let fast = td_target(&rewards, k, done, gamma, offset, boot);
            let slow = brute_force_target(&rewards, k, done, gamma, offset, boot);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }
}

#[test]
fn inflated_critic_is_ignored_by_the_minimum() {
    let agent = small_agent(small_config());
    let batch = random_batch(&mut rng(2), 64);
    let base = agent.td_targets(&batch, 0.9, &mut rng(3)).unwrap();
    for i in 0..2 {
        let mut inflated = agent.clone();
        inflated.critics[i].layers_mut().last_mut().unwrap().bias[0] += 10.0;
        let t = inflated.td_targets(&batch, 0.9, &mut rng(3)).unwrap();
        // the untouched critic alone bounds every target
        let mut other_only = agent.clone();
        other_only.critics[i] = agent.critics[1 - i].clone();
        let bound = other_only.td_targets(&batch, 0.9, &mut rng(3)).unwrap();
        for r in 0..batch.size {
            assert!(t[r] <= bound[r] + 1e-12, "target {} above single-critic bound {}", t[r], bound[r]);
            assert!(t[r] - base[r] < 10.0 * 0.9, "inflation leaked into target");
        }
    }
}

#[test]
fn td_targets_reject_bad_discount_and_nan() {
    let agent = small_agent(small_config());
    let batch = random_batch(&mut rng(2), 4);
    assert!(matches!(agent.td_targets(&batch, 1.0, &mut rng(3)), Err(Error::InvalidInput(_))));
    let mut broken = agent.clone();
    broken.critics[0].layers_mut().last_mut().unwrap().bias[0] = f64::NAN;
    broken.critics[1].layers_mut().last_mut().unwrap().bias[0] = f64::NAN;
    assert!(broken.td_targets(&batch, 0.9, &mut rng(3)).is_err());
}

#[test]
fn regularizer_is_zero_before_any_change() {
    let agent = small_agent(small_config());
    let batch = random_batch(&mut rng(4), 32);
    let p = agent
        .critic_problem(&batch, 0.9, Bootstrap::Online, true, Some(&agent.critics), &mut rng(5))
        .unwrap();
    let stats = agent.critic_loss(&p).unwrap();
    assert_eq!(stats.regularizer, 0.0);
    assert!(stats.loss > 0.0);
}

#[test]
fn perfect_critic_has_zero_td_loss() {
    let mut agent = small_agent(small_config());
    for c in agent.critics.iter_mut() {
        flatten(c, 3.0);
    }
    let batch = random_batch(&mut rng(6), 16);
    let mut p = agent.critic_problem(&batch, 0.9, Bootstrap::Online, false, None, &mut rng(7)).unwrap();
    p.targets = vec![3.0; p.rows];
    assert_eq!(agent.critic_loss(&p).unwrap().loss, 0.0);
}

#[test]
fn actor_update_leaves_critics_untouched() {
    let mut agent = small_agent(small_config());
    let critics = agent.critics.clone();
    let actor = agent.actor.clone();
    let batch = random_batch(&mut rng(8), 32);
    agent.actor_update(&batch, -1.0, &mut rng(9)).unwrap();
    assert_eq!(agent.critics, critics);
    assert_ne!(agent.actor, actor);

    let actor = agent.actor.clone();
    agent.critic_update(&batch, 0.9, None, &mut rng(10)).unwrap();
    assert_eq!(agent.actor, actor);
    assert_ne!(agent.critics, critics);
}

#[test]
fn agent_owns_exactly_three_networks() {
    let agent = small_agent(small_config());
    let nets = agent.networks();
    assert_eq!(nets.len(), 3);
    assert_eq!(nets[1].sizes(), nets[2].sizes());
    assert_eq!(nets[1].input_dim(), OBS + 1);
}

fn finite_difference(f: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()).max(1e-3)
}

#[test]
fn actor_loss_gradient_matches_finite_differences() {
    let agent = small_agent(AgentConfig { hidden: vec![8], ..small_config() });
    let batch = random_batch(&mut rng(11), 6);
    let mut noise_rng = rng(12);
    let noise: Vec<f64> = (0..6).map(|_| noise_rng.random_range(-1.5..1.5)).collect();
    let loss_at = |actor: &DenseNet| -> (f64, Vec<f64>, Tape) {
        let (raw, tape) = actor.forward_recorded(&batch.states, 6).unwrap();
        let head = GaussianPolicyHead::from_raw(&raw, 1).unwrap();
        let sample = head.sample_with_noise(noise.clone());
        let q = ClippedDoubleQ { critics: &agent.critics, obs_dim: OBS, action_dim: 1 };
        let (l, d) = agent.actor_loss_and_grad(&batch.states, &head, &sample, &q).unwrap();
        (l, d, tape)
    };
    let (_, d_raw, tape) = loss_at(&agent.actor);
    let (grads, _) = agent.actor.backward(&tape, &d_raw).unwrap();
    for (li, (gw, gb)) in grads.layers.iter().enumerate() {
        for (pi, analytic) in gw.iter().chain(gb.iter()).enumerate() {
            let mut f = |v: f64| {
                let mut a = agent.actor.clone();
                let layer = &mut a.layers_mut()[li];
                if pi < layer.weight.len() {
                    layer.weight[pi] = v;
                } else {
                    layer.bias[pi - layer.weight.len()] = v;
                }
                loss_at(&a).0
            };
            let layer = &agent.actor.layers()[li];
            let x = if pi < layer.weight.len() { layer.weight[pi] } else { layer.bias[pi - layer.weight.len()] };
            let numeric = finite_difference(&mut f, x);
            assert!(close(*analytic, numeric), "layer {li} param {pi}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let agent = small_agent(AgentConfig { hidden: vec![8], ..small_config() });
    let batch = random_batch(&mut rng(13), 5);
    // anchors from a perturbed copy so the regularizer has a non-zero gradient
    let mut other = agent.critics.clone();
    other[0].layers_mut()[0].bias[0] += 0.3;
    other[1].layers_mut()[1].bias[0] -= 0.2;
    let p = agent
        .critic_problem(&batch, 0.9, Bootstrap::Online, true, Some(&other), &mut rng(14))
        .unwrap();
    let rows = p.inputs.len() / (OBS + 1);
    for i in 0..2 {
        let (out, tape) = agent.critics[i].forward_recorded(&p.inputs, rows).unwrap();
        let n = p.rows as f64;
        let mut d_out = vec![0.0; rows];
        let anchors = p.anchors.as_ref().unwrap();
        for r in 0..p.rows {
            d_out[r] = 2.0 * (out[r] - p.targets[r]) / n;
            d_out[p.rows + r] = -2.0 * (anchors[i][r] - out[p.rows + r]) / n;
        }
        let (grads, _) = agent.critics[i].backward(&tape, &d_out).unwrap();
        let first_weights = &grads.layers[0].0;
        for (pi, analytic) in first_weights.iter().enumerate() {
            let mut f = |v: f64| {
                let mut a = agent.clone();
                a.critics[i].layers_mut()[0].weight[pi] = v;
                a.critic_loss(&p).unwrap().loss
            };
            let numeric = finite_difference(&mut f, agent.critics[i].layers()[0].weight[pi]);
            assert!(close(*analytic, numeric), "critic {i} param {pi}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn flat_critic_widens_the_policy() {
    let mut agent = small_agent(small_config());
    for c in agent.critics.iter_mut() {
        flatten(c, 1.0);
    }
    pin_actor(&mut agent, 0.0, -3.0);
    let batch = random_batch(&mut rng(15), 32);
    let head = agent.policy(&batch.states).unwrap();
    let sample = head.sample(&mut rng(16));
    let q = ClippedDoubleQ { critics: &agent.critics, obs_dim: OBS, action_dim: 1 };
    let (_, d_raw) = agent.actor_loss_and_grad(&batch.states, &head, &sample, &q).unwrap();
    // only the entropy term remains: mean gradient vanishes on average, log-std gradient is negative
    let d_log_std: f64 = d_raw.chunks_exact(2).map(|r| r[1]).sum();
    assert!(d_log_std < 0.0);
    let before = agent.policy(&batch.states).unwrap().log_std()[0];
    for _ in 0..20 {
        agent.actor_update(&batch, 1.0, &mut rng(17)).unwrap();
    }
    assert!(agent.policy(&batch.states).unwrap().log_std()[0] > before);
}

#[test]
fn alpha_moves_toward_target_entropy() {
    let batch = random_batch(&mut rng(18), 64);
    for (log_std, target, rises) in [(-5.0, -1.0, true), (0.0, -1.0, false)] {
        let mut agent = small_agent(small_config());
        pin_actor(&mut agent, 0.0, log_std);
        let before = agent.alpha();
        let s = agent.actor_update(&batch, target, &mut rng(19)).unwrap();
        assert_eq!(s.entropy < target, rises);
        assert_eq!(agent.alpha() > before, rises, "log-std {log_std}");
        assert!(agent.alpha() > 0.0);
    }
}

/// `Q(s, a) = -(a - 0.5)^2`.
struct Bandit;

impl ActionValue for Bandit {
    fn evaluate(&self, _states: &[f64], actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            actions.iter().map(|a| -(a - 0.5).powi(2)).collect(),
            actions.iter().map(|a| -2.0 * (a - 0.5)).collect(),
        ))
    }
}

#[test]
fn bandit_actor_finds_the_argmax() {
    let config = AgentConfig { init_alpha: 1e-6, actor_lr: 1e-3, ..small_config() };
    let mut agent = small_agent(config);
    let mut r = rng(20);
    let batch = random_batch(&mut r, 32);
    for _ in 0..2000 {
        agent.actor_update_with(&batch, -1.0, Some(&Bandit), &mut r).unwrap();
    }
    for s in batch.states.chunks_exact(OBS) {
        let a = agent.act(s, false, &mut r).unwrap()[0];
        assert!((a - 0.5).abs() < 0.02, "action {a}");
    }
}

/// One state looping to itself with reward 1 and a near-deterministic policy
/// at action 0.
fn one_state_agent(offset: u32) -> (Agent, ReplayBuffer) {
    let config = AgentConfig {
        hidden: vec![4],
        critic_lr: 1e-3,
        init_alpha: 1e-9,
        batch_size: 1,
        bootstrap_offset: offset,
        self_regularize: false,
        ..AgentConfig::aac()
    };
    let mut agent = Agent::new(OBS, 1, hyper(1, 1), config, &mut rng(21)).unwrap();
    pin_actor(&mut agent, 0.0, LOG_STD_MIN);
    let layout = Layout { obs_dim: OBS, action_dim: 1, k_max: 1 };
    let mut buffer = ReplayBuffer::new(layout, 1).unwrap();
    buffer
        .push(&Transition {
            state: vec![0.5, 1.0],
            action: vec![0.0],
            rewards: vec![1.0],
            next_state: vec![0.5, 1.0],
            done: false,
            k: 1,
        })
        .unwrap();
    (agent, buffer)
}

#[test]
fn one_state_critic_reaches_fixed_point() {
    let gamma = 0.5;
    for (offset, expected) in [(0, 1.0 / (1.0 - gamma)), (1, 1.0 / (1.0 - gamma * gamma))] {
        let (mut agent, buffer) = one_state_agent(offset);
        let mut r = rng(22);
        for _ in 0..5000 {
            let batch = buffer.sample(1, &mut r).unwrap();
            agent.critic_update(&batch, gamma, None, &mut r).unwrap();
        }
        let inputs = agent.critic_inputs(&[0.5, 1.0], &[0.0]);
        let q = agent.q_values(&agent.critics, &inputs).unwrap();
        for v in q {
            assert!((v[0] - expected).abs() < 1e-3, "offset {offset}: {} vs {expected}", v[0]);
        }
    }
}

#[test]
fn act_is_deterministic_and_bounded() {
    let mut agent = small_agent(small_config());
    let obs = [0.3, 1.0];
    let a = agent.act(&obs, false, &mut rng(23)).unwrap();
    assert_eq!(a, agent.act(&obs, false, &mut rng(24)).unwrap());
    let mut r = rng(25);
    for _ in 0..10_000 {
        let x = agent.act(&obs, true, &mut r).unwrap()[0];
        assert!(x > -1.0 && x < 1.0);
    }
    assert!(agent.act(&[0.3], false, &mut r).is_err());

    pin_actor(&mut agent, 0.7, LOG_STD_MIN);
    let det = agent.act(&obs, false, &mut r).unwrap()[0];
    let mc: f64 = (0..2000).map(|_| agent.act(&obs, true, &mut r).unwrap()[0]).sum::<f64>() / 2000.0;
    assert!((det - 0.7f64.tanh()).abs() < 1e-12);
    assert!((det - mc).abs() < 1e-2);
}

#[test]
fn train_step_runs_scheduled_updates() {
    let buffer = filled_buffer(200);
    for (a, c) in [(1, 1), (2, 40)] {
        let mut agent = Agent::new(OBS, 1, hyper(a, c), small_config(), &mut rng(26)).unwrap();
        let m = agent.train_step(&buffer, &mut rng(27)).unwrap();
        assert_eq!((m.critic_updates, m.actor_updates), (c, a));
        assert_eq!(agent.update_counts(), (c as u64, a as u64));
        assert_eq!(m.gamma, hyper(a, c).gamma());
        assert_eq!(m.target_entropy, -1.0);
    }
}

#[test]
fn train_step_is_reproducible() {
    let buffer = filled_buffer(200);
    let run = || {
        let mut agent = Agent::new(OBS, 1, hyper(2, 3), small_config(), &mut rng(28)).unwrap();
        let mut r = rng(29);
        let metrics: Vec<TrainMetrics> = (0..3).map(|_| agent.train_step(&buffer, &mut r).unwrap()).collect();
        (metrics, agent)
    };
    let (m1, a1) = run();
    let (m2, a2) = run();
    assert_eq!(m1, m2);
    assert_eq!(a1, a2);
}

#[test]
fn train_step_on_empty_buffer_fails() {
    let mut agent = small_agent(small_config());
    let empty = ReplayBuffer::new(LAYOUT, 10).unwrap();
    assert!(matches!(agent.train_step(&empty, &mut rng(30)), Err(Error::State(_))));
}

#[test]
fn checkpoint_round_trip() {
    let buffer = filled_buffer(100);
    let mut agent = Agent::new(OBS, 1, hyper(2, 2), small_config(), &mut rng(31)).unwrap();
    agent.train_step(&buffer, &mut rng(32)).unwrap();
    let bytes = encode_agent(&agent);
    let back = decode_agent(&bytes).unwrap();
    assert_eq!(back.actor, agent.actor);
    assert_eq!(back.critics, agent.critics);
    assert_eq!(back.log_alpha, agent.log_alpha);
    assert_eq!(back.actor_opt, agent.actor_opt);
    assert_eq!(back.hyper, agent.hyper);
    assert_eq!(back.config, agent.config);
    assert!(decode_agent(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode_agent(&bad).is_err());
}
