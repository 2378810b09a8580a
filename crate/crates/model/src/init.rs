use fuselang_core::init::fan_in_uniform;
use fuselang_core::{stream_rng, ParameterStore, Result, Tensor};
use rand::Rng;

/// 64-bit FNV-1a.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Initialization stream for one parameter, independent of registration order.
pub fn param_rng(seed: u64, name: &str) -> impl Rng {
    stream_rng(seed, &[name_hash(name)])
}

/// Registers a conv kernel `[c_out, c_in, k, k]` with fan-in uniform values
/// and, if `bias`, a zero bias `[c_out]`.
pub fn init_conv(store: &mut ParameterStore, prefix: &str, c_in: usize, c_out: usize, k: usize, bias: bool) -> Result<()> {
    let name = format!("{prefix}.w");
    let t = fan_in_uniform(&[c_out, c_in, k, k], c_in * k * k, &mut param_rng(store.seed(), &name));
    store.insert(name, t)?;
    if bias {
        store.insert(format!("{prefix}.b"), Tensor::zeros(&[c_out]))?;
    }
    Ok(())
}
