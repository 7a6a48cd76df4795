//! Central finite differences against the tape gradients, shared by the
//! gradient-check tests and the acceptance suite.
//!
//! Each check reduces the block output to a scalar `sum(out ⊙ P)` with a
//! random probe `P`, then compares d/dθ for every trainable parameter entry
//! and every input entry. The error of a tensor is
//! `‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, 1e-6)`; the floor only
//! matters for gradients that vanish identically (key biases, which the
//! softmax cancels, and biases feeding straight into batch norm), where both
//! sides are rounding noise.

use nces_core::synth::blocks::{attention, BatchNorm, GruCell, Isab, Linear, LstmCell, Mab, MultiHead, Pma, Sab};
use nces_core::tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
pub const FIXTURES: u64 = 5;

pub type Build<'a> = dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Var + 'a;

pub type Fixture = (ParamStore, Vec<Tensor>, Box<Build<'static>>);

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn eval(store: &ParamStore, inputs: &[Tensor], probe: &Tensor, build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, store, &vars);
    let p = g.input(probe.clone());
    let prod = g.mul(out, p).unwrap();
    let s = g.sum_all(prod);
    g.value(s).item()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / (norm(analytic) + norm(numeric)).max(1e-6)
}

/// Returns the worst tensor error and its label.
pub fn gradcheck(store: &mut ParamStore, inputs: &[Tensor], build: &Build, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, store, &vars);
    let [r, c] = g.shape(out);
    let probe = random(&mut rng, r, c);
    let p = g.input(probe.clone());
    let prod = g.mul(out, p).unwrap();
    let s = g.sum_all(prod);
    store.zero_grad();
    let grads = g.backward(s, store).unwrap();

    let mut worst = (0.0, String::from("none"));
    let mut record = |label: String, analytic: &[f64], numeric: &[f64]| {
        let e = relative_error(analytic, numeric);
        assert!(e.is_finite(), "{label}: non-finite error");
        if e > worst.0 {
            worst = (e, label);
        }
    };

    let ids: Vec<_> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for id in ids {
        let analytic = store.get(id).grad.data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let saved = store.get(id).value.data()[i];
            let at = |v: f64, st: &mut ParamStore| {
                st.get_mut(id).value.data_mut()[i] = v;
                eval(st, inputs, &probe, build)
            };
            let plus = at(saved + EPS, store);
            let minus = at(saved - EPS, store);
            store.get_mut(id).value.data_mut()[i] = saved;
            *slot = (plus - minus) / (2.0 * EPS);
        }
        let label = store.get(id).name.clone();
        record(label, &analytic, &numeric);
    }

    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut perturbed = inputs.to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let saved = inputs[k].data()[i];
            perturbed[k].data_mut()[i] = saved + EPS;
            let plus = eval(store, &perturbed, &probe, build);
            perturbed[k].data_mut()[i] = saved - EPS;
            let minus = eval(store, &perturbed, &probe, build);
            perturbed[k].data_mut()[i] = saved;
            *slot = (plus - minus) / (2.0 * EPS);
        }
        record(format!("input {k}"), &analytic, &numeric);
    }
    worst
}

/// Worst error over all fixtures of one block.
pub fn worst_error(fixture: fn(u64) -> Fixture) -> (f64, String) {
    let mut worst = (0.0, String::from("none"));
    for seed in 0..FIXTURES {
        let (mut store, inputs, build) = fixture(seed);
        let (err, label) = gradcheck(&mut store, &inputs, build.as_ref(), seed);
        if err >= worst.0 {
            worst = (err, format!("fixture {seed}: {label}"));
        }
    }
    worst
}

pub type Block = (&'static str, fn(u64) -> Fixture);

pub const BLOCKS: [Block; 10] = [
    ("attention", attention_block),
    ("multihead", multihead),
    ("MAB", mab),
    ("SAB", sab),
    ("ISAB", isab),
    ("PMA", pma),
    ("LSTM", lstm),
    ("GRU", gru),
    ("batch-norm head", batchnorm_head),
    ("cross-entropy", loss),
];

fn sizes(seed: u64) -> (usize, usize) {
    // Set sizes vary between fixtures.
    (2 + (seed as usize % 3), 1 + (seed as usize * 7 % 4))
}

pub fn attention_block(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = sizes(seed);
    let inputs = vec![random(&mut rng, n, 3), random(&mut rng, m, 3), random(&mut rng, m, 2)];
    let build: Box<Build> = Box::new(|g, _, v| attention(g, v[0], v[1], v[2]).unwrap());
    (ParamStore::new(), inputs, build)
}

pub fn multihead(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mh = MultiHead::new(&mut store, "mh", 4, 2, &mut rng).unwrap();
    let (n, m) = sizes(seed);
    let inputs = vec![random(&mut rng, n, 4), random(&mut rng, m, 4), random(&mut rng, m, 4)];
    let build: Box<Build> = Box::new(move |g, st, v| mh.forward(g, st, v[0], v[1], v[2]).unwrap());
    (store, inputs, build)
}

pub fn mab(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mab = Mab::new(&mut store, "mab", 4, 2, &mut rng).unwrap();
    let (n, m) = sizes(seed);
    let inputs = vec![random(&mut rng, n, 4), random(&mut rng, m, 4)];
    let build: Box<Build> = Box::new(move |g, st, v| mab.forward(g, st, v[0], v[1]).unwrap());
    (store, inputs, build)
}

pub fn sab(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let sab = Sab::new(&mut store, "sab", 4, 2, &mut rng).unwrap();
    let inputs = vec![random(&mut rng, sizes(seed).0, 4)];
    let build: Box<Build> = Box::new(move |g, st, v| sab.forward(g, st, v[0]).unwrap());
    (store, inputs, build)
}

pub fn isab(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let isab = Isab::new(&mut store, "isab", 4, 2, 3, &mut rng).unwrap();
    let inputs = vec![random(&mut rng, sizes(seed).0, 4)];
    let build: Box<Build> = Box::new(move |g, st, v| isab.forward(g, st, v[0]).unwrap());
    (store, inputs, build)
}

pub fn pma(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let pma = Pma::new(&mut store, "pma", 4, 2, 1 + seed as usize % 2, &mut rng).unwrap();
    let inputs = vec![random(&mut rng, sizes(seed).0 + 1, 4)];
    let build: Box<Build> = Box::new(move |g, st, v| pma.forward(g, st, v[0]).unwrap());
    (store, inputs, build)
}

pub fn lstm(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng);
    let steps = 2 + seed as usize % 3;
    let inputs: Vec<Tensor> = (0..steps).map(|_| random(&mut rng, 2, 3)).collect();
    let build: Box<Build> = Box::new(move |g, st, v| {
        let mut state = cell.zero_state(g, 2);
        for &x in v {
            state = cell.step(g, st, x, state).unwrap();
        }
        g.concat_cols(&[state.h, state.c.unwrap()]).unwrap()
    });
    (store, inputs, build)
}

pub fn gru(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
    let steps = 2 + seed as usize % 3;
    let inputs: Vec<Tensor> = (0..steps).map(|_| random(&mut rng, 2, 3)).collect();
    let build: Box<Build> = Box::new(move |g, st, v| {
        let mut state = cell.zero_state(g, 2);
        for &x in v {
            state = cell.step(g, st, x, state).unwrap();
        }
        state.h
    });
    (store, inputs, build)
}

pub fn batchnorm_head(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let h = 3;
    let fc1 = Linear::new(&mut store, "fc1", 2 * h, h, true, &mut rng);
    let fc2 = Linear::new(&mut store, "fc2", h, h, true, &mut rng);
    let bn = BatchNorm::new(&mut store, "bn", h);
    let fc3 = Linear::new(&mut store, "fc3", h, 5, true, &mut rng);
    let rows = 3 + seed as usize % 3;
    let inputs = vec![random(&mut rng, rows, 2 * h)];
    let build: Box<Build> = Box::new(move |g, st, v| {
        let a = fc1.forward(g, st, v[0]).unwrap();
        let a = g.relu(a);
        let b = fc2.forward(g, st, a).unwrap();
        let (b, _) = bn.forward(g, st, b, true).unwrap();
        fc3.forward(g, st, b).unwrap()
    });
    (store, inputs, build)
}

pub fn loss(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (classes, length, rows) = (3 + seed as usize % 2, 2 + seed as usize % 3, 2);
    let targets: Vec<usize> = (0..rows * length).map(|_| rng.gen_range(0..classes)).collect();
    let mut scores = random(&mut rng, rows, classes * length);
    scores.data_mut().iter_mut().for_each(|x| *x *= 3.0);
    let inputs = vec![scores];
    let build: Box<Build> =
        Box::new(move |g, _, v| g.cross_entropy(v[0], &targets, classes, length).unwrap());
    (ParamStore::new(), inputs, build)
}
