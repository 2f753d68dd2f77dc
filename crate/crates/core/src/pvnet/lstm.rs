//! Single-layer LSTM used as the path encoder. The final hidden state is the
//! path representation; the empty sequence encodes to the zero vector.
//!
//! Parameter slices follow gate order i, f, g, o: `wx` is `[4h x d]`
//! row-major, `wh` is `[4h x h]` row-major, `b` is `[4h]`.

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step activations kept for back-propagation through time.
pub(crate) struct LstmCache {
    pub xs: Vec<Vec<f64>>,
    pub gate_i: Vec<Vec<f64>>,
    pub gate_f: Vec<Vec<f64>>,
    pub gate_g: Vec<Vec<f64>>,
    pub gate_o: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub hiddens: Vec<Vec<f64>>,
}

/// Run the sequence; returns the final hidden state and the cache.
pub(crate) fn forward(
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
    inputs: &[Vec<f64>],
    d: usize,
    h: usize,
) -> (Vec<f64>, LstmCache) {
    debug_assert_eq!(wx.len(), 4 * h * d);
    debug_assert_eq!(wh.len(), 4 * h * h);
    debug_assert_eq!(b.len(), 4 * h);
    let steps = inputs.len();
    let mut cache = LstmCache {
        xs: inputs.to_vec(),
        gate_i: Vec::with_capacity(steps),
        gate_f: Vec::with_capacity(steps),
        gate_g: Vec::with_capacity(steps),
        gate_o: Vec::with_capacity(steps),
        cells: Vec::with_capacity(steps),
        hiddens: Vec::with_capacity(steps),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for x in inputs {
        debug_assert_eq!(x.len(), d);
        let mut z = b.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let wx_row = &wx[r * d..(r + 1) * d];
            let wh_row = &wh[r * h..(r + 1) * h];
            for (c, xc) in x.iter().enumerate() {
                *zr += wx_row[c] * xc;
            }
            for (c, hc) in h_prev.iter().enumerate() {
                *zr += wh_row[c] * hc;
            }
        }
        let gi: Vec<f64> = (0..h).map(|j| sigmoid(z[j])).collect();
        let gf: Vec<f64> = (0..h).map(|j| sigmoid(z[h + j])).collect();
        let gg: Vec<f64> = (0..h).map(|j| z[2 * h + j].tanh()).collect();
        let go: Vec<f64> = (0..h).map(|j| sigmoid(z[3 * h + j])).collect();
        let c_new: Vec<f64> = (0..h).map(|j| gf[j] * c_prev[j] + gi[j] * gg[j]).collect();
        let h_new: Vec<f64> = (0..h).map(|j| go[j] * c_new[j].tanh()).collect();
        cache.gate_i.push(gi);
        cache.gate_f.push(gf);
        cache.gate_g.push(gg);
        cache.gate_o.push(go);
        cache.cells.push(c_new.clone());
        cache.hiddens.push(h_new.clone());
        c_prev = c_new;
        h_prev = h_new;
    }
    (h_prev, cache)
}

/// Back-propagate from a gradient on the final hidden state. Accumulates
/// into the parameter gradient slices and returns per-step input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    wx: &[f64],
    wh: &[f64],
    cache: &LstmCache,
    d_final_h: &[f64],
    gwx: &mut [f64],
    gwh: &mut [f64],
    gb: &mut [f64],
    d: usize,
    h: usize,
) -> Vec<Vec<f64>> {
    let steps = cache.xs.len();
    let mut d_inputs = vec![vec![0.0; d]; steps];
    if steps == 0 {
        return d_inputs;
    }
    let mut dh = d_final_h.to_vec();
    let mut dc = vec![0.0; h];
    for t in (0..steps).rev() {
        let gi = &cache.gate_i[t];
        let gf = &cache.gate_f[t];
        let gg = &cache.gate_g[t];
        let go = &cache.gate_o[t];
        let c = &cache.cells[t];
        let c_prev: &[f64] = if t == 0 { &[] } else { &cache.cells[t - 1] };
        let h_prev: &[f64] = if t == 0 { &[] } else { &cache.hiddens[t - 1] };

        // dz for the four gates, in pre-activation space.
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for j in 0..h {
            let tc = c[j].tanh();
            let do_j = dh[j] * tc;
            let dct = dc[j] + dh[j] * go[j] * (1.0 - tc * tc);
            let di = dct * gg[j];
            let dg = dct * gi[j];
            let cp = if t == 0 { 0.0 } else { c_prev[j] };
            let df = dct * cp;
            dc_prev[j] = dct * gf[j];
            dz[j] = di * gi[j] * (1.0 - gi[j]);
            dz[h + j] = df * gf[j] * (1.0 - gf[j]);
            dz[2 * h + j] = dg * (1.0 - gg[j] * gg[j]);
            dz[3 * h + j] = do_j * go[j] * (1.0 - go[j]);
        }
        let x = &cache.xs[t];
        let mut dh_prev = vec![0.0; h];
        for (r, dzr) in dz.iter().enumerate() {
            gb[r] += dzr;
            let gwx_row = &mut gwx[r * d..(r + 1) * d];
            for (cix, xc) in x.iter().enumerate() {
                gwx_row[cix] += dzr * xc;
            }
            let wx_row = &wx[r * d..(r + 1) * d];
            for (cix, di) in d_inputs[t].iter_mut().enumerate() {
                *di += wx_row[cix] * dzr;
            }
            if t > 0 {
                let gwh_row = &mut gwh[r * h..(r + 1) * h];
                let wh_row = &wh[r * h..(r + 1) * h];
                for cix in 0..h {
                    gwh_row[cix] += dzr * h_prev[cix];
                    dh_prev[cix] += wh_row[cix] * dzr;
                }
            }
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    d_inputs
}
