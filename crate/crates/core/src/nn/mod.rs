//! Dense networks, Adam and the squashed Gaussian policy head.

mod adam;
pub mod codec;
mod dense;
mod policy;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use dense::{DenseNet, Gradients, Linear, Tape};
pub use policy::{log_one_minus_tanh_sq, GaussianPolicyHead, SquashedSample, LOG_STD_MAX, LOG_STD_MIN};

use crate::error::{Error, Result};
use codec::{ByteReader, ByteWriter};

pub const NET_CHECKPOINT_MAGIC: &[u8; 8] = b"AACNET\0\0";
pub const NET_CHECKPOINT_VERSION: u32 = 1;

/// Applies one Adam step of `grads` to `net`.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    let mut p = net.param_slices_mut();
    state.step(&mut p, &g)
}

/// Serializes a network and its optimizer state.
pub fn encode_net_checkpoint(net: &DenseNet, adam: &AdamState) -> Vec<u8> {
    let mut w = ByteWriter::with_header(NET_CHECKPOINT_MAGIC, NET_CHECKPOINT_VERSION);
    w.net(net);
    w.adam(adam);
    w.into_bytes()
}

pub fn decode_net_checkpoint(bytes: &[u8]) -> Result<(DenseNet, AdamState)> {
    let mut r = ByteReader::new(bytes);
    let version = r.header(NET_CHECKPOINT_MAGIC)?;
    if version != NET_CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported network checkpoint version {version}")));
    }
    let net = r.net()?;
    let adam = r.adam()?;
    r.finish()?;
    if adam.shapes() != net.param_shapes() {
        return Err(Error::Format("optimizer shapes do not match network".into()));
    }
    Ok((net, adam))
}
