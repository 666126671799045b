//! LSTM cells (optionally with peephole connections), sequence unrolling
//! with exact backpropagation through time, and the bidirectional wrapper.
//!
//! Gate blocks are ordered [i | f | g | o] inside the fused 4H dimension.
//! Peephole gates read the cell state elementwise: i and f see c_{t-1},
//! o sees the freshly computed c_t.

use rand::Rng;

use super::param::{scaled_uniform, Param};
use super::tensor::{gemm_into, matmul, Scalar, Tensor};

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::ONE / (S::ONE + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct LstmCell<S> {
    pub input: usize,
    pub hidden: usize,
    /// [input, 4H]
    pub w_x: Param<S>,
    /// [hidden, 4H]
    pub w_h: Param<S>,
    /// [4H]; forget block initialized to 1.
    pub bias: Param<S>,
    /// Elementwise peephole weights [H] each, in (i, f, o) order.
    pub peephole: Option<[Param<S>; 3]>,
}

/// Per-timestep activations needed by the backward pass; all [N·H].
struct StepCache<S> {
    i: Vec<S>,
    f: Vec<S>,
    g: Vec<S>,
    o: Vec<S>,
    c_prev: Vec<S>,
    c: Vec<S>,
    tanh_c: Vec<S>,
}

pub struct LstmSequenceCache<S> {
    x: Tensor<S>,
    /// Hidden states h_0..h_T, shape [(T+1)·N·H]; h_0 is zeros.
    h_all: Vec<S>,
    steps: Vec<StepCache<S>>,
}

impl<S: Scalar> LstmCell<S> {
    pub fn new(name: &str, input: usize, hidden: usize, peephole: bool, rng: &mut impl Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for b in &mut bias.data_mut()[hidden..2 * hidden] {
            *b = S::ONE;
        }
        let peephole = peephole.then(|| {
            ["p_i", "p_f", "p_o"].map(|g| {
                Param::new(format!("{name}.{g}"), scaled_uniform(&[hidden], hidden, rng))
            })
        });
        LstmCell {
            input,
            hidden,
            w_x: Param::new(format!("{name}.w_x"), scaled_uniform(&[input, 4 * hidden], input, rng)),
            w_h: Param::new(
                format!("{name}.w_h"),
                scaled_uniform(&[hidden, 4 * hidden], hidden, rng),
            ),
            bias: Param::new(format!("{name}.bias"), bias),
            peephole,
        }
    }

    /// One step on a batch: x_t [N, input], states [N·H]. Writes h_t and c_t.
    /// `pre` must already hold x_t·W_x + bias for this step; h_prev·W_h is
    /// added here.
    fn step(
        &self,
        pre: &mut Tensor<S>,
        h_prev: &[S],
        c_prev: &[S],
        h_out: &mut [S],
        c_out: &mut [S],
    ) -> StepCache<S> {
        let hsz = self.hidden;
        let n = pre.shape()[0];
        let h_prev_t = Tensor::from_vec(&[n, hsz], h_prev.to_vec());
        gemm_into(S::ONE, &h_prev_t, false, &self.w_h.value, false, S::ONE, pre);
        let mut cache = StepCache {
            i: vec![S::ZERO; n * hsz],
            f: vec![S::ZERO; n * hsz],
            g: vec![S::ZERO; n * hsz],
            o: vec![S::ZERO; n * hsz],
            c_prev: c_prev.to_vec(),
            c: vec![S::ZERO; n * hsz],
            tanh_c: vec![S::ZERO; n * hsz],
        };
        let peep = self.peephole.as_ref();
        for ni in 0..n {
            let row = &pre.data()[ni * 4 * hsz..(ni + 1) * 4 * hsz];
            for j in 0..hsz
            {
                let idx = ni * hsz + j;
                let cp = c_prev[idx];
                let (mut i_pre, mut f_pre, g_pre, mut o_pre) =
                    (row[j], row[hsz + j], row[2 * hsz + j], row[3 * hsz + j]);
                if let Some([pi, pf, _]) = peep {
                    i_pre += pi.value.data()[j] * cp;
                    f_pre += pf.value.data()[j] * cp;
                }
                let i = sigmoid(i_pre);
                let f = sigmoid(f_pre);
                let g = g_pre.tanh();
                let c = f * cp + i * g;
                if let Some([_, _, po]) = peep {
                    o_pre += po.value.data()[j] * c;
                }
                let o = sigmoid(o_pre);
                let tc = c.tanh();
                cache.i[idx] = i;
                cache.f[idx] = f;
                cache.g[idx] = g;
                cache.o[idx] = o;
                cache.c[idx] = c;
                cache.tanh_c[idx] = tc;
                c_out[idx] = c;
                h_out[idx] = o * tc;
            }
        }
        cache
    }

    /// Unidirectional pass over [T, N, input] with zero initial states.
    /// Returns hidden states [T, N, hidden].
    pub fn run_sequence(&self, x: &Tensor<S>) -> (Tensor<S>, LstmSequenceCache<S>) {
        let &[t_len, n, input] = x.shape() else { panic!("lstm expects [T, N, F] input") };
        assert_eq!(input, self.input, "lstm input feature mismatch");
        let hsz = self.hidden;
        // Input projection for every step in one GEMM.
        let x2 = x.clone().reshaped(&[t_len * n, input]);
        let mut pre_all = matmul(&x2, false, &self.w_x.value, false);
        for row in pre_all.data_mut().chunks_exact_mut(4 * hsz) {
            for (v, &b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        let mut h_all = vec![S::ZERO; (t_len + 1) * n * hsz];
        let mut c_prev = vec![S::ZERO; n * hsz];
        let mut c_next = vec![S::ZERO; n * hsz];
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut pre = Tensor::from_vec(
                &[n, 4 * hsz],
                pre_all.data()[t * n * 4 * hsz..(t + 1) * n * 4 * hsz].to_vec(),
            );
            let (prev_part, next_part) = h_all.split_at_mut((t + 1) * n * hsz);
            let h_prev = &prev_part[t * n * hsz..];
            let h_out = &mut next_part[..n * hsz];
            let cache = self.step(&mut pre, h_prev, &c_prev, h_out, &mut c_next);
            steps.push(cache);
            std::mem::swap(&mut c_prev, &mut c_next);
        }
        let out = Tensor::from_vec(&[t_len, n, hsz], h_all[n * hsz..].to_vec());
        out.debug_check_finite("lstm.run_sequence");
        (out, LstmSequenceCache { x: x.clone(), h_all, steps })
    }

    /// BPTT. Accumulates parameter gradients; returns d loss / d input
    /// [T, N, input].
    pub fn backward(&mut self, cache: &LstmSequenceCache<S>, d_out: &Tensor<S>) -> Tensor<S> {
        let &[t_len, n, input] = cache.x.shape() else { panic!("cache lost input shape") };
        let hsz = self.hidden;
        d_out.assert_shape(&[t_len, n, hsz], "lstm.backward d_out");
        let mut dpre_all = Tensor::zeros(&[t_len * n, 4 * hsz]);
        let mut dh_next = vec![S::ZERO; n * hsz];
        let mut dc_next = vec![S::ZERO; n * hsz];
        let (mut dp_i, mut dp_f, mut dp_o) =
            (vec![S::ZERO; hsz], vec![S::ZERO; hsz], vec![S::ZERO; hsz]);
        for t in (0..t_len).rev() {
            let sc = &cache.steps[t];
            let peep = self.peephole.as_ref();
            {
                let dpre = &mut dpre_all.data_mut()[t * n * 4 * hsz..(t + 1) * n * 4 * hsz];
                for ni in 0..n {
                    for j in 0..hsz {
                        let idx = ni * hsz + j;
                        let dh = d_out.data()[t * n * hsz + idx] + dh_next[idx];
                        let (i, f, g, o) = (sc.i[idx], sc.f[idx], sc.g[idx], sc.o[idx]);
                        let tc = sc.tanh_c[idx];
                        let do_pre = dh * tc * o * (S::ONE - o);
                        // Cell gradient: output branch, carry from t+1, and
                        // (for peepholes) the o-gate's view of c_t.
                        let mut dc = dh * o * (S::ONE - tc * tc) + dc_next[idx];
                        if let Some([_, _, po]) = peep {
                            dc += do_pre * po.value.data()[j];
                        }
                        let di_pre = dc * g * i * (S::ONE - i);
                        let df_pre = dc * sc.c_prev[idx] * f * (S::ONE - f);
                        let dg_pre = dc * i * (S::ONE - g * g);
                        let mut dcp = dc * f;
                        if let Some([pi, pf, _]) = peep {
                            dcp += di_pre * pi.value.data()[j] + df_pre * pf.value.data()[j];
                            dp_i[j] += di_pre * sc.c_prev[idx];
                            dp_f[j] += df_pre * sc.c_prev[idx];
                            dp_o[j] += do_pre * sc.c[idx];
                        }
                        dc_next[idx] = dcp;
                        let row = ni * 4 * hsz;
                        dpre[row + j] = di_pre;
                        dpre[row + hsz + j] = df_pre;
                        dpre[row + 2 * hsz + j] = dg_pre;
                        dpre[row + 3 * hsz + j] = do_pre;
                    }
                }
            }
            // Recurrent contributions for step t-1.
            let dpre_t = Tensor::from_vec(
                &[n, 4 * hsz],
                dpre_all.data()[t * n * 4 * hsz..(t + 1) * n * 4 * hsz].to_vec(),
            );
            let h_prev =
                Tensor::from_vec(&[n, hsz], cache.h_all[t * n * hsz..(t + 1) * n * hsz].to_vec());
            gemm_into(S::ONE, &h_prev, true, &dpre_t, false, S::ONE, &mut self.w_h.grad);
            let dh_prev = matmul(&dpre_t, false, &self.w_h.value, true);
            dh_next.copy_from_slice(dh_prev.data());
        }
        if let Some([pi, pf, po]) = self.peephole.as_mut() {
            for j in 0..hsz {
                pi.grad.data_mut()[j] += dp_i[j];
                pf.grad.data_mut()[j] += dp_f[j];
                po.grad.data_mut()[j] += dp_o[j];
            }
        }
        // Input-side gradients in bulk.
        let x2 = cache.x.clone().reshaped(&[t_len * n, input]);
        gemm_into(S::ONE, &x2, true, &dpre_all, false, S::ONE, &mut self.w_x.grad);
        let db = self.bias.grad.data_mut();
        for row in dpre_all.data().chunks_exact(4 * hsz) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        matmul(&dpre_all, false, &self.w_x.value, true).reshaped(&[t_len, n, input])
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut ps = vec![&self.w_x, &self.w_h, &self.bias];
        if let Some(peep) = &self.peephole {
            ps.extend(peep.iter());
        }
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = vec![&mut self.w_x, &mut self.w_h, &mut self.bias];
        if let Some(peep) = &mut self.peephole {
            ps.extend(peep.iter_mut());
        }
        ps
    }
}

/// Reverse the time axis of a [T, N, F] tensor.
pub fn reverse_time<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let &[t_len, n, f] = x.shape() else { panic!("reverse_time expects [T, N, F]") };
    let mut out = Tensor::zeros(x.shape());
    let frame = n * f;
    for t in 0..t_len {
        out.data_mut()[t * frame..(t + 1) * frame]
            .copy_from_slice(&x.data()[(t_len - 1 - t) * frame..(t_len - t) * frame]);
    }
    out
}

/// Two cells over opposite time directions, outputs concatenated per step.
#[derive(Clone, Debug)]
pub struct BiLstm<S> {
    pub fwd: LstmCell<S>,
    pub bwd: LstmCell<S>,
}

pub struct BiLstmCache<S> {
    fwd: LstmSequenceCache<S>,
    bwd: LstmSequenceCache<S>,
}

impl<S: Scalar> BiLstm<S> {
    pub fn new(name: &str, input: usize, hidden: usize, peephole: bool, rng: &mut impl Rng) -> Self {
        BiLstm {
            fwd: LstmCell::new(&format!("{name}.fwd"), input, hidden, peephole, rng),
            bwd: LstmCell::new(&format!("{name}.bwd"), input, hidden, peephole, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// [T, N, F] → [T, N, 2·hidden], forward direction first in the concat.
    pub fn forward(&self, x: &Tensor<S>) -> (Tensor<S>, BiLstmCache<S>) {
        let &[t_len, n, _] = x.shape() else { panic!("bilstm expects [T, N, F]") };
        let hsz = self.hidden();
        let (h_fwd, cache_fwd) = self.fwd.run_sequence(x);
        let x_rev = reverse_time(x);
        let (h_bwd_rev, cache_bwd) = self.bwd.run_sequence(&x_rev);
        let h_bwd = reverse_time(&h_bwd_rev);
        let mut out = Tensor::zeros(&[t_len, n, 2 * hsz]);
        for t in 0..t_len {
            for ni in 0..n {
                let src = (t * n + ni) * hsz;
                let dst = (t * n + ni) * 2 * hsz;
                out.data_mut()[dst..dst + hsz].copy_from_slice(&h_fwd.data()[src..src + hsz]);
                out.data_mut()[dst + hsz..dst + 2 * hsz]
                    .copy_from_slice(&h_bwd.data()[src..src + hsz]);
            }
        }
        (out, BiLstmCache { fwd: cache_fwd, bwd: cache_bwd })
    }

    pub fn backward(&mut self, cache: &BiLstmCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let &[t_len, n, f2] = dy.shape() else { panic!("bilstm backward expects [T, N, 2H]") };
        let hsz = self.hidden();
        assert_eq!(f2, 2 * hsz, "bilstm gradient feature dim");
        let mut d_fwd = Tensor::zeros(&[t_len, n, hsz]);
        let mut d_bwd = Tensor::zeros(&[t_len, n, hsz]);
        for t in 0..t_len {
            for ni in 0..n {
                let src = (t * n + ni) * 2 * hsz;
                let dst = (t * n + ni) * hsz;
                d_fwd.data_mut()[dst..dst + hsz].copy_from_slice(&dy.data()[src..src + hsz]);
                d_bwd.data_mut()[dst..dst + hsz]
                    .copy_from_slice(&dy.data()[src + hsz..src + 2 * hsz]);
            }
        }
        let dx_fwd = self.fwd.backward(&cache.fwd, &d_fwd);
        let d_bwd_rev = reverse_time(&d_bwd);
        let dx_bwd_rev = self.bwd.backward(&cache.bwd, &d_bwd_rev);
        let dx_bwd = reverse_time(&dx_bwd_rev);
        let mut dx = dx_fwd;
        for (a, b) in dx.data_mut().iter_mut().zip(dx_bwd.data()) {
            *a += *b;
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        let mut ps = self.fwd.params();
        ps.extend(self.bwd.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = self.fwd.params_mut();
        ps.extend(self.bwd.params_mut());
        ps
    }
}
