//! Differentiable building blocks. Each block owns parameter ids in a shared
//! [`ParamStore`] and adds its computation to a [`Graph`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, Graph, ParamId, ParamStore, Tensor, Var};

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

/// `x · W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Self::with_bound(store, name, inputs, outputs, bias, 1.0 / (inputs as f64).sqrt(), rng)
    }

    /// Weights and bias drawn uniformly from `±bound`.
    pub fn with_bound(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), uniform(rng, inputs, outputs, bound), true);
        let b = bias.then(|| store.add(format!("{name}.b"), uniform(rng, 1, outputs, bound), true));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// `softmax(Q Kᵀ) V`, unscaled. The weighted sum over `V` rows is
/// order-invariant, so permuting the rows of `K` and `V` together leaves the
/// output bit-identical.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let kt = g.transpose(k);
    let logits = g.matmul(q, kt)?;
    let weights = g.softmax_rows(logits);
    g.set_matmul(weights, v)
}

#[derive(Clone, Debug)]
pub struct MultiHead {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHead {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "{heads} heads do not divide model width {dim}"
            )));
        }
        Ok(MultiHead {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, true, rng),
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, true, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, true, rng),
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, false, rng),
            heads,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, q: Var, k: Var, v: Var) -> Result<Var> {
        let q = self.wq.forward(g, store, q)?;
        let k = self.wk.forward(g, store, k)?;
        let v = self.wv.forward(g, store, v)?;
        let width = self.dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * width, (h + 1) * width);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            outs.push(attention(g, qh, kh, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.wo.forward(g, store, cat)
    }
}

/// `H = X + Multihead(X, Y, Y)`, `out = H + relu(H W + b)`; no layer norm.
#[derive(Clone, Debug)]
pub struct Mab {
    pub attn: MultiHead,
    pub ff: Linear,
}

impl Mab {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Mab {
            attn: MultiHead::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ff: Linear::new(store, &format!("{name}.ff"), dim, dim, true, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let a = self.attn.forward(g, store, x, y, y)?;
        let h = g.add(x, a)?;
        let f = self.ff.forward(g, store, h)?;
        let f = g.relu(f);
        g.add(h, f)
    }
}

#[derive(Clone, Debug)]
pub struct Sab {
    pub mab: Mab,
}

impl Sab {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Sab {
            mab: Mab::new(store, name, dim, heads, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.mab.forward(g, store, x, x)
    }
}

/// `MAB(X, MAB(I, X))` with `m` learned inducing points `I`.
#[derive(Clone, Debug)]
pub struct Isab {
    pub inducing: ParamId,
    pub first: Mab,
    pub second: Mab,
}

impl Isab {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (6.0 / (m + dim) as f64).sqrt();
        Ok(Isab {
            inducing: store.add(format!("{name}.inducing"), uniform(rng, m, dim, bound), true),
            first: Mab::new(store, &format!("{name}.mab0"), dim, heads, rng)?,
            second: Mab::new(store, &format!("{name}.mab1"), dim, heads, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let i = g.param(store, self.inducing);
        let h = self.first.forward(g, store, i, x)?;
        self.second.forward(g, store, x, h)
    }
}

/// `MAB(S, X)` with `k` learned seed vectors `S`.
#[derive(Clone, Debug)]
pub struct Pma {
    pub seeds: ParamId,
    pub mab: Mab,
}

impl Pma {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = (6.0 / (k + dim) as f64).sqrt();
        Ok(Pma {
            seeds: store.add(format!("{name}.seeds"), uniform(rng, k, dim, bound), true),
            mab: Mab::new(store, &format!("{name}.mab"), dim, heads, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.param(store, self.seeds);
        self.mab.forward(g, store, s, x)
    }
}

/// Hidden (and, for LSTM, cell) state of one recurrent layer.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentState {
    pub h: Var,
    pub c: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: Linear,
    pub hidden: Linear,
    pub width: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, width: usize, rng: &mut impl Rng) -> Self {
        // Every gate weight shares the ±1/√width range.
        let bound = 1.0 / (width as f64).sqrt();
        let input = Linear::with_bound(store, &format!("{name}.ih"), inputs, 4 * width, true, bound, rng);
        let hidden = Linear::with_bound(store, &format!("{name}.hh"), width, 4 * width, true, bound, rng);
        LstmCell { input, hidden, width }
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> RecurrentState {
        RecurrentState {
            h: g.input(Tensor::zeros(rows, self.width)),
            c: Some(g.input(Tensor::zeros(rows, self.width))),
        }
    }

    /// Gate order in the pre-activation columns: input, forget, candidate, output.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: RecurrentState) -> Result<RecurrentState> {
        let c_prev = state
            .c
            .ok_or_else(|| Error::InvalidArgument("LSTM step without a cell state".into()))?;
        let a = self.input.forward(g, store, x)?;
        let b = self.hidden.forward(g, store, state.h)?;
        let pre = g.add(a, b)?;
        let w = self.width;
        let i = g.slice_cols(pre, 0, w)?;
        let f = g.slice_cols(pre, w, 2 * w)?;
        let c = g.slice_cols(pre, 2 * w, 3 * w)?;
        let o = g.slice_cols(pre, 3 * w, 4 * w)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let c = g.tanh(c);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, c)?;
        let c_new = g.add(keep, write)?;
        let t = g.tanh(c_new);
        let h = g.mul(o, t)?;
        Ok(RecurrentState { h, c: Some(c_new) })
    }
}

#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub width: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, width: usize, rng: &mut impl Rng) -> Self {
        // Every gate weight shares the ±1/√width range.
        let bound = 1.0 / (width as f64).sqrt();
        let input = Linear::with_bound(store, &format!("{name}.ih"), inputs, 3 * width, true, bound, rng);
        let hidden = Linear::with_bound(store, &format!("{name}.hh"), width, 3 * width, true, bound, rng);
        GruCell { input, hidden, width }
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> RecurrentState {
        RecurrentState {
            h: g.input(Tensor::zeros(rows, self.width)),
            c: None,
        }
    }

    /// Gate order: reset, update, candidate. The reset gate multiplies the
    /// hidden contribution to the candidate after its bias.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: RecurrentState) -> Result<RecurrentState> {
        let a = self.input.forward(g, store, x)?;
        let b = self.hidden.forward(g, store, state.h)?;
        let w = self.width;
        let (ar, az, an) = (g.slice_cols(a, 0, w)?, g.slice_cols(a, w, 2 * w)?, g.slice_cols(a, 2 * w, 3 * w)?);
        let (br, bz, bn) = (g.slice_cols(b, 0, w)?, g.slice_cols(b, w, 2 * w)?, g.slice_cols(b, 2 * w, 3 * w)?);
        let r = g.add(ar, br)?;
        let r = g.sigmoid(r);
        let z = g.add(az, bz)?;
        let z = g.sigmoid(z);
        let gated = g.mul(r, bn)?;
        let n = g.add(an, gated)?;
        let n = g.tanh(n);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(state.h, n)?;
        let kept = g.mul(z, diff)?;
        let h = g.add(n, kept)?;
        Ok(RecurrentState { h, c: None })
    }
}

/// Either recurrent cell behind one interface.
#[derive(Clone, Debug)]
pub enum Cell {
    Lstm(LstmCell),
    Gru(GruCell),
}

impl Cell {
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> RecurrentState {
        match self {
            Cell::Lstm(c) => c.zero_state(g, rows),
            Cell::Gru(c) => c.zero_state(g, rows),
        }
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: RecurrentState) -> Result<RecurrentState> {
        match self {
            Cell::Lstm(c) => c.step(g, store, x, state),
            Cell::Gru(c) => c.step(g, store, x, state),
        }
    }
}

/// Feature-wise batch norm with running statistics kept as frozen parameters.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, width, 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(1, width), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::filled(1, width, 1.0), false),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Batch statistics in training mode, running statistics otherwise.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, training: bool) -> Result<(Var, Option<BatchStats>)> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        if training {
            let (y, stats) = g.batch_norm(x, gamma, beta, self.eps)?;
            return Ok((y, Some(stats)));
        }
        let mean = store.value(self.running_mean);
        let neg_mean = Tensor::from_vec(1, mean.cols(), mean.data().iter().map(|m| -m).collect())?;
        let var = store.value(self.running_var);
        let inv_std = Tensor::from_vec(
            1,
            var.cols(),
            var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect(),
        )?;
        let neg_mean = g.input(neg_mean);
        let inv_std = g.input(inv_std);
        let centered = g.add_row(x, neg_mean)?;
        let xhat = g.mul_row(centered, inv_std)?;
        let scaled = g.mul_row(xhat, gamma)?;
        Ok((g.add_row(scaled, beta)?, None))
    }

    /// Folds batch statistics into the running estimates; the variance is
    /// stored unbiased.
    pub fn update_running(&self, store: &mut ParamStore, stats: &BatchStats, batch_rows: usize) {
        let correction = if batch_rows > 1 {
            batch_rows as f64 / (batch_rows - 1) as f64
        } else {
            1.0
        };
        let m = self.momentum;
        let rm = &mut store.get_mut(self.running_mean).value;
        for (r, &b) in rm.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let rv = &mut store.get_mut(self.running_var).value;
        for (r, &b) in rv.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn attention_fixtures() {
        let mut g = Graph::new();
        // Identical keys: uniform weights, so the output is the mean of V.
        let q = g.input(t(1, 2, &[3.0, -1.0]));
        let k = g.input(t(2, 2, &[1.0, 1.0, 1.0, 1.0]));
        let v = g.input(t(2, 2, &[0.0, 2.0, 4.0, 6.0]));
        let o = attention(&mut g, q, k, v).unwrap();
        assert_eq!(g.value(o).data(), [2.0, 4.0]);

        // Logits [0, ln 3] give weights [1/4, 3/4].
        let q = g.input(t(1, 1, &[1.0]));
        let k = g.input(t(2, 1, &[0.0, 3f64.ln()]));
        let v = g.input(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let o = attention(&mut g, q, k, v).unwrap();
        let out = g.value(o).data();
        assert!((out[0] - 0.25).abs() < 1e-15 && (out[1] - 0.75).abs() < 1e-15);

        let x = g.input(t(1, 3, &[0.5, -2.0, 7.0]));
        let o = attention(&mut g, x, x, x).unwrap();
        assert_eq!(g.value(o).data(), [0.5, -2.0, 7.0]);
    }

    #[test]
    fn multihead_shapes_and_divisibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(MultiHead::new(&mut store, "bad", 10, 4, &mut rng).is_err());
        let mh = MultiHead::new(&mut store, "mh", 40, 4, &mut rng).unwrap();
        let mut g = Graph::new();
        let q = g.input(uniform(&mut rng, 3, 40, 1.0));
        let kv = g.input(uniform(&mut rng, 5, 40, 1.0));
        let o = mh.forward(&mut g, &store, q, kv, kv).unwrap();
        assert_eq!(g.shape(o), [3, 40]);
    }

    fn set_identity(store: &mut ParamStore, l: &Linear, n: usize) {
        store.set_value(l.w, Tensor::identity(n)).unwrap();
        if let Some(b) = l.b {
            store.set_value(b, Tensor::zeros(1, n)).unwrap();
        }
    }

    #[test]
    fn single_head_identity_projections_equal_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mh = MultiHead::new(&mut store, "mh", 3, 1, &mut rng).unwrap();
        for l in [&mh.wq, &mh.wk, &mh.wv, &mh.wo] {
            set_identity(&mut store, l, 3);
        }
        let mut g = Graph::new();
        let q = g.input(uniform(&mut rng, 2, 3, 1.0));
        let kv = g.input(uniform(&mut rng, 4, 3, 1.0));
        let a = mh.forward(&mut g, &store, q, kv, kv).unwrap();
        let b = attention(&mut g, q, kv, kv).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn mab_hand_fixture() {
        // 1×2 input, identity attention with one key: Multihead(X, X, X) = X,
        // so H = 2X; a zero rFF adds relu(0) = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mab = Mab::new(&mut store, "mab", 2, 1, &mut rng).unwrap();
        for l in [&mab.attn.wq, &mab.attn.wk, &mab.attn.wv, &mab.attn.wo] {
            set_identity(&mut store, l, 2);
        }
        store.set_value(mab.ff.w, Tensor::zeros(2, 2)).unwrap();
        store.set_value(mab.ff.b.unwrap(), Tensor::zeros(1, 2)).unwrap();
        let mut g = Graph::new();
        let x = g.input(t(1, 2, &[1.5, -0.5]));
        let o = mab.forward(&mut g, &store, x, x).unwrap();
        assert_eq!(g.value(o).data(), [3.0, -1.0]);

        // A unit rFF bias then adds relu(H + 0·H + 1) = relu(2X + 1) elementwise.
        store.set_value(mab.ff.b.unwrap(), t(1, 2, &[1.0, 1.0])).unwrap();
        let mut g = Graph::new();
        let x = g.input(t(1, 2, &[1.5, -0.5]));
        let o = mab.forward(&mut g, &store, x, x).unwrap();
        assert_eq!(g.value(o).data(), [4.0, 0.0]);
    }

    #[test]
    fn isab_and_pma_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let isab = Isab::new(&mut store, "isab", 8, 2, 4, &mut rng).unwrap();
        let pma = Pma::new(&mut store, "pma", 8, 2, 1, &mut rng).unwrap();
        for n in [1, 3, 17] {
            let mut g = Graph::new();
            let x = g.input(uniform(&mut rng, n, 8, 1.0));
            let h = isab.forward(&mut g, &store, x).unwrap();
            assert_eq!(g.shape(h), [n, 8]);
            let p = pma.forward(&mut g, &store, h).unwrap();
            assert_eq!(g.shape(p), [1, 8]);
        }
    }

    #[test]
    fn running_stats_update() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let stats = BatchStats {
            mean: vec![2.0],
            var: vec![1.0],
        };
        bn.update_running(&mut store, &stats, 2);
        assert!((store.value(bn.running_mean).item() - 0.2).abs() < 1e-15);
        // 0.9 · 1 + 0.1 · (1 · 2/1)
        assert!((store.value(bn.running_var).item() - 1.1).abs() < 1e-15);
    }
}
