use super::{Agent, AgentConfig, AgentParts, HyperParams};
use crate::error::{Error, Result};
use crate::nn::codec::{ByteReader, ByteWriter};

pub const AGENT_CHECKPOINT_MAGIC: &[u8; 8] = b"AACAGNT\0";
const VERSION: u32 = 1;

/// Networks, optimizer moments, log-alpha and hyperparameters of one agent.
pub fn encode_agent(agent: &Agent) -> Vec<u8> {
    let mut w = ByteWriter::with_header(AGENT_CHECKPOINT_MAGIC, VERSION);
    w.str(&serde_json::to_string(&agent.config).expect("config serializes"));
    let hp = &agent.hyper;
    w.u64(hp.a as u64);
    w.u64(hp.c as u64);
    w.f64(hp.h);
    w.u64(hp.k as u64);
    w.f64(hp.g);
    w.f64(agent.log_alpha);
    w.net(&agent.actor);
    w.adam(&agent.actor_opt);
    for i in 0..2 {
        w.net(&agent.critics[i]);
        w.adam(&agent.critic_opts[i]);
    }
    w.adam(&agent.alpha_opt);
    w.into_bytes()
}

pub fn decode_agent(bytes: &[u8]) -> Result<Agent> {
    let mut r = ByteReader::new(bytes);
    let version = r.header(AGENT_CHECKPOINT_MAGIC)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported agent checkpoint version {version}")));
    }
    let config: AgentConfig = serde_json::from_str(&r.str()?).map_err(|e| Error::Format(e.to_string()))?;
    let hyper = HyperParams {
        a: r.usize()?,
        c: r.usize()?,
        h: r.f64()?,
        k: r.usize()?,
        g: r.f64()?,
    };
    let log_alpha = r.f64()?;
    let actor = r.net()?;
    let actor_opt = r.adam()?;
    let c0 = r.net()?;
    let o0 = r.adam()?;
    let c1 = r.net()?;
    let o1 = r.adam()?;
    let alpha_opt = r.adam()?;
    r.finish()?;
    Agent::from_parts(AgentParts {
        actor,
        critics: [c0, c1],
        log_alpha,
        actor_opt,
        critic_opts: [o0, o1],
        alpha_opt,
        hyper,
        config,
    })
}
