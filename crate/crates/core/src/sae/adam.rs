use super::{column_norms, normalize_columns, SaeGrads, SaeParams, TrainConfig};

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: SaeGrads,
    pub v: SaeGrads,
}

impl AdamState {
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            step: 0,
            m: SaeParams::zeros(d, m),
            v: SaeParams::zeros(d, m),
        }
    }
}

fn update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}

/// One bias-corrected Adam step.
///
/// With `cfg.normalize_decoder`, the component of each decoder-column gradient
/// parallel to that column is removed before the moments are updated, and the
/// columns are rescaled to unit norm afterwards.
pub fn adam_step(p: &mut SaeParams, mut g: SaeGrads, state: &mut AdamState, cfg: &TrainConfig) {
    if cfg.normalize_decoder {
        remove_parallel_component(&p.w_dec, &mut g.w_dec);
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);

    update(
        p.w_enc.as_mut_slice(),
        g.w_enc.as_slice(),
        state.m.w_enc.as_mut_slice(),
        state.v.w_enc.as_mut_slice(),
        cfg,
        bc1,
        bc2,
    );
    update(
        p.w_dec.as_mut_slice(),
        g.w_dec.as_slice(),
        state.m.w_dec.as_mut_slice(),
        state.v.w_dec.as_mut_slice(),
        cfg,
        bc1,
        bc2,
    );
    update(
        &mut p.b_pre,
        &g.b_pre,
        &mut state.m.b_pre,
        &mut state.v.b_pre,
        cfg,
        bc1,
        bc2,
    );
    update(
        &mut p.b_enc,
        &g.b_enc,
        &mut state.m.b_enc,
        &mut state.v.b_enc,
        cfg,
        bc1,
        bc2,
    );

    if cfg.normalize_decoder {
        normalize_columns(&mut p.w_dec);
    }
}

/// `g_j <- g_j - (g_j . w_j) w_j / ||w_j||^2` for every column `j`.
fn remove_parallel_component(w: &crate::matrix::Matrix, g: &mut crate::matrix::Matrix) {
    let norms = column_norms(w);
    let mut proj = vec![0.0; w.cols()];
    for (wr, gr) in w.row_iter().zip(g.row_iter()) {
        for ((p, a), b) in proj.iter_mut().zip(wr).zip(gr) {
            *p += a * b;
        }
    }
    for (p, n) in proj.iter_mut().zip(&norms) {
        *p = if *n > 0.0 { *p / (n * n) } else { 0.0 };
    }
    for r in 0..w.rows() {
        let wr = w.row(r);
        for ((gv, wv), p) in g.row_mut(r).iter_mut().zip(wr).zip(&proj) {
            *gv -= p * wv;
        }
    }
}
