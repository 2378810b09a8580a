use fuselang_core::init::bilinear_upsampler;
use fuselang_core::{Bound, CoreError, Graph, ParameterStore, Result, Var};

use crate::config::DecoderConfig;
use crate::init::init_conv;

pub fn init_decoder(store: &mut ParameterStore, prefix: &str, cfg: &DecoderConfig, d: usize) -> Result<()> {
    cfg.validate()?;
    let mut c_in = d;
    for (i, &c) in cfg.classifier.iter().enumerate() {
        init_conv(store, &format!("{prefix}.cls{i}"), c_in, c, 1, true)?;
        c_in = c;
    }
    let (kernel, _) = bilinear_upsampler(c_in, cfg.out_channels, cfg.up_kernel, cfg.up_stride)?;
    store.insert(format!("{prefix}.up.w"), kernel)
}

/// 1x1 classifier stack (ReLU between layers, none after the last) followed
/// by the bilinear-initialized transposed convolution. `o` is `[D, M, N]`;
/// the editing map is `[D_e, M * stride, N * stride]`.
pub fn decode(g: &Graph, p: &Bound, prefix: &str, cfg: &DecoderConfig, o: Var) -> Result<Var> {
    let s = g.shape(o);
    if s.len() != 3 {
        return Err(CoreError::Config(format!("decoder expects [D, M, N], got {s:?}")));
    }
    let mut x = o;
    let n = cfg.classifier.len();
    for i in 0..n {
        let w = p.get(&format!("{prefix}.cls{i}.w"))?;
        let b = p.get(&format!("{prefix}.cls{i}.b"))?;
        x = g.conv2d(x, w, Some(b), 1, 0)?;
        if i + 1 < n {
            x = g.relu(x);
        }
    }
    let up = p.get(&format!("{prefix}.up.w"))?;
    g.deconv2d(x, up, None, cfg.up_stride, cfg.up_stride / 2)
}
