//! Dilated causal temporal-convolution stack used as the series encoder.
//!
//! Three levels with kernel width 3 and dilations 1, 2, 4; channels run
//! 1 -> h -> h -> h with ReLU after every convolution. Convolutions are
//! causal: taps reach only backward in time, out-of-range taps read zero.
//! The final level's last timestep is the series representation.

pub(crate) const KERNEL: usize = 3;
pub(crate) const DILATIONS: [usize; 3] = [1, 2, 4];

/// (in_channels, out_channels, dilation) per level.
pub(crate) fn level_specs(h: usize) -> [(usize, usize, usize); 3] {
    [
        (1, h, DILATIONS[0]),
        (h, h, DILATIONS[1]),
        (h, h, DILATIONS[2]),
    ]
}

/// Packed parameter length: per level `w[out][in][KERNEL]` then `b[out]`.
pub(crate) fn param_len(h: usize) -> usize {
    level_specs(h)
        .iter()
        .map(|(i, o, _)| o * i * KERNEL + o)
        .sum()
}

/// Activations per level (index 0 is the input as a single channel), plus
/// pre-activations for the ReLU masks.
pub(crate) struct TcnCache {
    pub acts: Vec<Vec<Vec<f64>>>,
    pub pres: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn forward(params: &[f64], input: &[f64], h: usize) -> (Vec<f64>, TcnCache) {
    debug_assert_eq!(params.len(), param_len(h));
    let w = input.len();
    let mut cache = TcnCache {
        acts: vec![vec![input.to_vec()]],
        pres: Vec::new(),
    };
    let mut offset = 0;
    for (in_ch, out_ch, dil) in level_specs(h) {
        let wlen = out_ch * in_ch * KERNEL;
        let weights = &params[offset..offset + wlen];
        let biases = &params[offset + wlen..offset + wlen + out_ch];
        offset += wlen + out_ch;
        let prev = cache.acts.last().expect("input level present");
        let mut pre = vec![vec![0.0; w]; out_ch];
        for (oc, pre_oc) in pre.iter_mut().enumerate() {
            for (t, p) in pre_oc.iter_mut().enumerate() {
                let mut acc = biases[oc];
                for (ic, prev_ic) in prev.iter().enumerate() {
                    let wrow = &weights[(oc * in_ch + ic) * KERNEL..];
                    for k in 0..KERNEL {
                        let back = (KERNEL - 1 - k) * dil;
                        if back <= t {
                            acc += wrow[k] * prev_ic[t - back];
                        }
                    }
                }
                *p = acc;
            }
        }
        let act: Vec<Vec<f64>> = pre
            .iter()
            .map(|row| row.iter().map(|&z| z.max(0.0)).collect())
            .collect();
        cache.pres.push(pre);
        cache.acts.push(act);
    }
    let last = cache.acts.last().expect("final level present");
    let code: Vec<f64> = last.iter().map(|row| row[w - 1]).collect();
    (code, cache)
}

/// Back-propagate from a gradient on the final-timestep code, accumulating
/// into `grads` (same packing as `params`). Input gradients are discarded:
/// the series is data, not parameters.
pub(crate) fn backward(
    params: &[f64],
    cache: &TcnCache,
    d_code: &[f64],
    grads: &mut [f64],
    h: usize,
) {
    let specs = level_specs(h);
    let w = cache.acts[0][0].len();
    // Seed: gradient lands on the last timestep of the final level only.
    let mut d_act: Vec<Vec<f64>> = vec![vec![0.0; w]; specs[2].1];
    for (oc, row) in d_act.iter_mut().enumerate() {
        row[w - 1] = d_code[oc];
    }
    // Walk levels backward; recompute each level's parameter offset.
    let mut offsets = [0usize; 3];
    let mut acc = 0;
    for (l, (in_ch, out_ch, _)) in specs.iter().enumerate() {
        offsets[l] = acc;
        acc += out_ch * in_ch * KERNEL + out_ch;
    }
    for l in (0..3).rev() {
        let (in_ch, out_ch, dil) = specs[l];
        let wlen = out_ch * in_ch * KERNEL;
        let weights = &params[offsets[l]..offsets[l] + wlen];
        let (gw, gb) = {
            let gslice = &mut grads[offsets[l]..offsets[l] + wlen + out_ch];
            gslice.split_at_mut(wlen)
        };
        let pre = &cache.pres[l];
        let prev = &cache.acts[l];
        let mut d_prev = vec![vec![0.0; w]; in_ch];
        for oc in 0..out_ch {
            for t in 0..w {
                let dz = if pre[oc][t] > 0.0 { d_act[oc][t] } else { 0.0 };
                if dz == 0.0 {
                    continue;
                }
                gb[oc] += dz;
                for ic in 0..in_ch {
                    let base = (oc * in_ch + ic) * KERNEL;
                    for k in 0..KERNEL {
                        let back = (KERNEL - 1 - k) * dil;
                        if back <= t {
                            gw[base + k] += dz * prev[ic][t - back];
                            d_prev[ic][t - back] += weights[base + k] * dz;
                        }
                    }
                }
            }
        }
        d_act = d_prev;
    }
}
