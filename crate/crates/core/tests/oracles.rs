//! Independent reference computations checked against the library.

use std::collections::HashMap;

use nova_rec::data::{
    leave_one_out_split, load_interactions, synthetic, Batch, BatchContext, Interaction,
    SideInfoSchema,
};
use nova_rec::embed::{fuse_add, fuse_concat, fuse_gating, FeatureLayout, FusionKind, GateActivation};
use nova_rec::model::{AttentionKind, Model, ModelConfig, LAYER_NORM_EPS};
use nova_rec::params::ParamStore;
use nova_rec::tensor::{Tape, Tensor};
use nova_rec::train::{popularity_counts, Adam};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "elem {i}: {x} vs {y}");
    }
}

// ---------- tensor hand cases ----------

#[test]
fn softmax_matches_high_precision() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
    let s = t.softmax_lastdim(x);
    // e^{-2}, e^{-1}, 1 normalised; constants to 20 digits
    let (a, b) = (0.135_335_283_236_612_69_f64, 0.367_879_441_171_442_32_f64);
    let z = a + b + 1.0;
    close(t.value(s).data(), &[a / z, b / z, 1.0 / z], 1e-15);

    let y = t.constant(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap());
    let s = t.softmax_lastdim(y);
    assert!(t.value(s).all_finite());
    assert!((t.value(s).data()[0] - 1.0).abs() < 1e-15);
}

#[test]
fn attention_hand_cases() {
    let mut t = Tape::<f64>::new();
    // L=2, d=1: row 0 scores [1, 0]
    let q = t.constant(Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap());
    let k = t.constant(Tensor::from_f64(&[2, 1], &[1.0, 0.0]).unwrap());
    let v = t.constant(Tensor::from_f64(&[2, 1], &[2.0, 4.0]).unwrap());
    let (out, attn) = t.scaled_dot_attention(q, k, v, None).unwrap();
    let e = std::f64::consts::E;
    let p0 = e / (e + 1.0);
    close(&t.value(attn).data()[..2], &[p0, 1.0 - p0], 1e-15);
    close(&t.value(out).data()[..1], &[2.0 * p0 + 4.0 * (1.0 - p0)], 1e-14);
    // row 1 has zero query: uniform
    close(&t.value(attn).data()[2..], &[0.5, 0.5], 1e-15);

    // Q = K = 0 gives column means of V
    let z = t.constant(Tensor::zeros(&[3, 2]));
    let v = t.constant(Tensor::from_f64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
    let (out, _) = t.scaled_dot_attention(z, z, v, None).unwrap();
    for row in t.value(out).data().chunks(2) {
        close(row, &[3.0, 5.0], 1e-14);
    }

    // single key
    let one = t.constant(Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap());
    let (out, attn) = t.scaled_dot_attention(one, one, one, None).unwrap();
    assert_eq!(t.value(attn).data(), &[1.0]);
    assert_eq!(t.value(out).data(), &[0.3, -0.7]);
}

#[test]
fn backward_analytic_cases() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq);
    let half = t.scale(s, 0.5);
    t.backward(half).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[0.5, -1.0, 2.0]);
}

// ---------- data ----------

const SCHEMA: &str = "genre.kind = item\ngenre.encoding = multi\nrating.kind = behavior\nrating.encoding = categorical\n";

#[test]
fn shuffled_log_is_sorted_per_user() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut rows: Vec<(String, String, i64, String)> = Vec::new();
    let mut expected: HashMap<String, Vec<(i64, String)>> = HashMap::new();
    for u in 0..30 {
        let n = rng.gen_range(5..15);
        for _ in 0..n {
            let item = format!("i{}", rng.gen_range(1..12));
            let ts = rng.gen_range(0..1_000_000);
            rows.push((format!("u{u}"), item.clone(), ts, rng.gen_range(1..=5).to_string()));
            expected.entry(format!("u{u}")).or_default().push((ts, item));
        }
    }
    // shuffle the file order
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.gen_range(0..=i));
    }
    let mut text = String::from("user_id\titem_id\ttimestamp\trating\n");
    for (u, i, ts, r) in &rows {
        text += &format!("{u}\t{i}\t{ts}\t{r}\n");
    }
    let mut items = String::from("item_id\tgenre\n");
    for i in 1..12 {
        items += &format!("i{i}\tg{}|g{}\n", i % 3, i % 5);
    }
    let (p, q, s) = (dir.path().join("x.tsv"), dir.path().join("items.tsv"), dir.path().join("s.txt"));
    std::fs::write(&p, text).unwrap();
    std::fs::write(&q, items).unwrap();
    std::fs::write(&s, SCHEMA).unwrap();
    let schema = SideInfoSchema::load(&s).unwrap();
    let ds = load_interactions(&p, Some(&q), &schema).unwrap();

    assert_eq!(ds.sequences.len(), 30);
    for seq in &ds.sequences {
        let mut oracle = expected[&seq.user].clone();
        oracle.sort_by_key(|(ts, _)| *ts);
        let got_ts: Vec<i64> = seq.interactions.iter().map(|i| i.timestamp).collect();
        let want_ts: Vec<i64> = oracle.iter().map(|(t, _)| *t).collect();
        assert_eq!(got_ts, want_ts, "user {}", seq.user);
        let got_items: Vec<&str> = seq.interactions.iter().map(|i| ds.catalog.raw_id(i.item)).collect();
        // equal timestamps may keep either order; compare the multiset per timestamp
        let mut a: Vec<(i64, &str)> = got_ts.iter().copied().zip(got_items).collect();
        let mut b: Vec<(i64, &str)> = oracle.iter().map(|(t, i)| (*t, i.as_str())).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}

#[test]
fn short_sequences_are_discarded() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("user_id\titem_id\ttimestamp\n");
    for t in 0..4 {
        text += &format!("short\ta\t{t}\n");
    }
    for t in 0..5 {
        text += &format!("long\tb\t{t}\n");
    }
    let p = dir.path().join("x.tsv");
    std::fs::write(&p, text).unwrap();
    let ds = load_interactions(&p, None, &SideInfoSchema::empty()).unwrap();
    assert_eq!(ds.sequences.len(), 1);
    assert_eq!(ds.sequences[0].user, "long");
}

#[test]
fn popularity_matches_hash_count() {
    let ds = synthetic::random_with_features(25, 60, 10, 5);
    let split = leave_one_out_split(&ds.sequences).unwrap();
    let mut oracle: HashMap<usize, usize> = HashMap::new();
    for s in &split.train {
        for it in &s.interactions {
            *oracle.entry(it.item).or_default() += 1;
        }
    }
    let counts = popularity_counts(&split.train, ds.num_items());
    for (j, &c) in counts.iter().enumerate() {
        assert_eq!(c, oracle.get(&(j + 1)).copied().unwrap_or(0));
    }
}

// ---------- fusion ----------

#[test]
fn add_matches_sequential_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fs: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(8, &mut rng)).collect();
    let mut t = Tape::<f64>::new();
    let vars: Vec<_> = fs.iter().map(|f| t.constant(Tensor::from_f64(&[2, 4], f).unwrap())).collect();
    let out = fuse_add(&mut t, &vars).unwrap();
    let oracle: Vec<f64> = (0..8).map(|i| fs[0][i] + fs[1][i] + fs[2][i]).collect();
    close(t.value(out).data(), &oracle, 0.0);
}

#[test]
fn concat_matches_concat_then_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, h, k) = (3, 4, 3);
    let fs: Vec<Vec<f64>> = (0..k).map(|_| rand_vec(n * h, &mut rng)).collect();
    let w = rand_vec(k * h * h, &mut rng);
    let b = rand_vec(h, &mut rng);
    let mut t = Tape::<f64>::new();
    let vars: Vec<_> = fs.iter().map(|f| t.constant(Tensor::from_f64(&[n, h], f).unwrap())).collect();
    let wv = t.constant(Tensor::from_f64(&[k * h, h], &w).unwrap());
    let bv = t.constant(Tensor::from_f64(&[h], &b).unwrap());
    let out = fuse_concat(&mut t, &vars, wv, bv).unwrap();
    let mut oracle = vec![0.0; n * h];
    for r in 0..n {
        let cat: Vec<f64> = fs.iter().flat_map(|f| f[r * h..(r + 1) * h].to_vec()).collect();
        for j in 0..h {
            oracle[r * h + j] = b[j] + (0..k * h).map(|p| cat[p] * w[p * h + j]).sum::<f64>();
        }
    }
    close(t.value(out).data(), &oracle, 1e-12);
}

#[test]
fn gating_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, h, k) = (4, 5, 3);
    let fs: Vec<Vec<f64>> = (0..k).map(|_| rand_vec(n * h, &mut rng)).collect();
    let w = rand_vec(h, &mut rng);
    let mut t = Tape::<f64>::new();
    let vars: Vec<_> = fs.iter().map(|f| t.constant(Tensor::from_f64(&[n, h], f).unwrap())).collect();
    let wv = t.constant(Tensor::from_f64(&[h, 1], &w).unwrap());
    let (out, gates) = fuse_gating(&mut t, &vars, wv, GateActivation::Softmax).unwrap();
    for r in 0..n {
        // F is k×h; logits = F·w; out = softmax(logits)ᵀ F, summed in a compensated way
        let logits: Vec<f64> = (0..k)
            .map(|i| (0..h).map(|j| fs[i][r * h + j] * w[j]).sum())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let g: Vec<f64> = e.iter().map(|x| x / z).collect();
        close(&t.value(gates).data()[r * k..(r + 1) * k], &g, 1e-14);
        let row: Vec<f64> = (0..h).map(|j| (0..k).map(|i| g[i] * fs[i][r * h + j]).sum()).collect();
        close(&t.value(out).data()[r * h..(r + 1) * h], &row, 1e-13);
    }

    let (_, sig) = fuse_gating(&mut t, &vars, wv, GateActivation::Sigmoid).unwrap();
    assert!(t.value(sig).data().iter().all(|&g| g > 0.0 && g < 1.0));
}

#[test]
fn zero_gate_weights_average_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(6, &mut rng)).collect();
    let mut t = Tape::<f64>::new();
    let vars: Vec<_> = fs.iter().map(|f| t.constant(Tensor::from_f64(&[2, 3], f).unwrap())).collect();
    let w = t.constant(Tensor::zeros(&[3, 1]));
    let (out, _) = fuse_gating(&mut t, &vars, w, GateActivation::Softmax).unwrap();
    let mean: Vec<f64> = (0..6).map(|i| fs.iter().map(|f| f[i]).sum::<f64>() / 4.0).collect();
    close(t.value(out).data(), &mean, 1e-15);
}

// ---------- model: straight-line reference forward ----------

struct Reference<'a> {
    store: &'a ParamStore<f64>,
}

impl Reference<'_> {
    fn p(&self, name: &str) -> &[f64] {
        self.store.get(self.store.id(name).unwrap_or_else(|| panic!("no param {name}"))).data()
    }

    fn row(&self, table: &str, i: usize, h: usize) -> Vec<f64> {
        self.p(table)[i * h..(i + 1) * h].to_vec()
    }

    /// `x · W + b` for one vector.
    fn linear(&self, x: &[f64], name: &str, out: usize) -> Vec<f64> {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        (0..out)
            .map(|j| b[j] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + j]).sum::<f64>())
            .collect()
    }

    fn norm(&self, x: &[f64], name: &str) -> Vec<f64> {
        let g = self.p(&format!("{name}.gamma"));
        let b = self.p(&format!("{name}.beta"));
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let s = (var + LAYER_NORM_EPS).sqrt();
        x.iter().enumerate().map(|(i, v)| (v - mu) / s * g[i] + b[i]).collect()
    }

    fn fuse(&self, kind: FusionKind, prefix: &str, inputs: &[Vec<f64>]) -> Vec<f64> {
        let h = inputs[0].len();
        if inputs.len() == 1 {
            return inputs[0].clone();
        }
        match kind {
            FusionKind::Add => (0..h).map(|j| inputs.iter().map(|f| f[j]).sum()).collect(),
            FusionKind::Concat => {
                let cat: Vec<f64> = inputs.concat();
                self.linear(&cat, prefix, h)
            }
            FusionKind::Gating => {
                let w = self.p(&format!("{prefix}.gate"));
                let logits: Vec<f64> = inputs.iter().map(|f| f.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                (0..h).map(|j| inputs.iter().zip(&e).map(|(f, g)| g / z * f[j]).sum()).collect()
            }
        }
    }

    /// Hidden states `[B·L][h]` computed position by position.
    fn forward(&self, model: &Model<f64>, batch: &Batch) -> Vec<Vec<f64>> {
        let cfg = &model.config;
        let (h, l, heads) = (cfg.hidden_size, batch.seq_len, cfg.heads);
        let d = h / heads;
        let n = batch.len();
        let ids: Vec<Vec<f64>> = (0..n).map(|p| self.row("embed.item", batch.items[p], h)).collect();
        let side: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|p| {
                let mut s: Vec<Vec<f64>> = model
                    .layout
                    .features
                    .iter()
                    .map(|f| {
                        let idx = batch.features[f.column].at(p);
                        let table = format!("embed.feature.{}", f.name);
                        let mut acc = vec![0.0; h];
                        for &i in idx {
                            for (a, v) in acc.iter_mut().zip(self.row(&table, i, h)) {
                                *a += v / idx.len() as f64;
                            }
                        }
                        acc
                    })
                    .collect();
                if cfg.use_position {
                    s.push(self.row("embed.position", batch.positions[p], h));
                }
                s
            })
            .collect();
        let with_side = |x: &[Vec<f64>], prefix: &str| -> Vec<Vec<f64>> {
            (0..n)
                .map(|p| {
                    let mut inputs = vec![x[p].clone()];
                    inputs.extend(side[p].iter().cloned());
                    self.fuse(cfg.fusion, prefix, &inputs)
                })
                .collect()
        };
        let mut x = match cfg.attention {
            AttentionKind::Invasive => with_side(&ids, "fusion"),
            AttentionKind::Nova => ids,
        };
        let valid = batch.key_valid();
        for layer in 0..cfg.layers {
            let r = match cfg.attention {
                AttentionKind::Invasive => x.clone(),
                AttentionKind::Nova => with_side(&x, &format!("layer{layer}.fusion")),
            };
            let name = |s: &str| format!("layer{layer}.{s}");
            let q: Vec<Vec<f64>> = r.iter().map(|v| self.linear(v, &name("query"), h)).collect();
            let k: Vec<Vec<f64>> = r.iter().map(|v| self.linear(v, &name("key"), h)).collect();
            let v: Vec<Vec<f64>> = x.iter().map(|v| self.linear(v, &name("value"), h)).collect();
            let mut next = Vec::with_capacity(n);
            for b in 0..batch.batch_size {
                for i in 0..l {
                    let qi = b * l + i;
                    let mut ctx = vec![0.0; h];
                    for head in 0..heads {
                        let cols = head * d..(head + 1) * d;
                        let scores: Vec<Option<f64>> = (0..l)
                            .map(|j| {
                                let kj = b * l + j;
                                valid[kj].then(|| {
                                    cols.clone().map(|c| q[qi][c] * k[kj][c]).sum::<f64>() / (d as f64).sqrt()
                                })
                            })
                            .collect();
                        let mx = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let e: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - mx).exp())).collect();
                        let z: f64 = e.iter().sum();
                        for c in cols.clone() {
                            ctx[c] = (0..l).map(|j| e[j] / z * v[b * l + j][c]).sum();
                        }
                    }
                    let o = self.linear(&ctx, &name("output"), h);
                    let y: Vec<f64> = o.iter().zip(&x[qi]).map(|(a, b)| a + b).collect();
                    let y = self.norm(&y, &name("norm1"));
                    let f: Vec<f64> = self
                        .linear(&y, &name("ffn1"), 4 * h)
                        .into_iter()
                        .map(|t| 0.5 * t * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (t + 0.044715 * t.powi(3))).tanh()))
                        .collect();
                    let f = self.linear(&f, &name("ffn2"), h);
                    let z: Vec<f64> = f.iter().zip(&y).map(|(a, b)| a + b).collect();
                    next.push(self.norm(&z, &name("norm2")));
                }
            }
            x = next;
        }
        x
    }
}

/// Replaces every parameter with random values so zero biases and unit
/// norms cannot hide mistakes.
fn scramble(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, Vec<usize>)> = model.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
    for (name, shape) in names {
        let n = shape.iter().product();
        let scale = if name.contains("gamma") { 1.0 } else { 0.5 };
        let data: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-1.0..1.0) * scale + if name.contains("gamma") { 1.0 } else { 0.0 })
            .collect();
        model.params.set(&name, Tensor::new(shape, data).unwrap()).unwrap();
    }
}

fn batch_for(ds: &nova_rec::data::Dataset, l: usize, users: usize, seed: u64) -> Batch {
    let ctx = BatchContext::new(&ds.schema, &ds.catalog, l).unwrap();
    let views: Vec<&[Interaction]> = ds
        .sequences
        .iter()
        .take(users)
        .enumerate()
        .map(|(u, s)| &s.interactions[..(u % l) + 1])
        .collect();
    ctx.masked_batch(&views, 0.4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn forward_matches_reference_for_every_stack() {
    let ds = synthetic::random_with_features(11, 6, 8, 9);
    for attention in [AttentionKind::Invasive, AttentionKind::Nova] {
        for fusion in [FusionKind::Add, FusionKind::Concat, FusionKind::Gating] {
            let cfg = ModelConfig {
                hidden_size: 6,
                heads: 2,
                layers: 2,
                max_len: 5,
                fusion,
                attention,
                ..ModelConfig::default()
            };
            let layout = FeatureLayout::from_dataset(&ds, None).unwrap();
            let mut model = Model::<f64>::new(cfg, layout, 3).unwrap();
            scramble(&mut model, 17);
            let batch = batch_for(&ds, 5, 4, 1);

            let mut tape = Tape::<f64>::new();
            let bound = model.params.bind(&mut tape, false);
            let trace = model.forward(&mut tape, &bound, &batch, None).unwrap();
            let got = tape.value(trace.hidden).data().to_vec();
            let want: Vec<f64> = Reference { store: &model.params }.forward(&model, &batch).concat();
            close(&got, &want, 1e-10);
        }
    }
}

#[test]
fn single_head_walkthrough() {
    // one layer, one head, L = 2, h = 2, no side inputs
    let cfg = ModelConfig {
        hidden_size: 2,
        heads: 1,
        layers: 1,
        max_len: 2,
        fusion: FusionKind::Add,
        attention: AttentionKind::Invasive,
        use_position: false,
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::new(cfg, FeatureLayout::ids_only(3), 0).unwrap();
    scramble(&mut model, 5);
    let ds = synthetic::successor_walk(3, 2, 6, 0);
    let ctx = BatchContext::new(&ds.schema, &ds.catalog, 2).unwrap();
    let batch = ctx.plain_batch(&[&ds.sequences[0].interactions[..2]]).unwrap();

    // step by step for the two positions
    let r = Reference { store: &model.params };
    let e: Vec<Vec<f64>> = batch.items.iter().map(|&i| r.row("embed.item", i, 2)).collect();
    let q: Vec<Vec<f64>> = e.iter().map(|x| r.linear(x, "layer0.query", 2)).collect();
    let k: Vec<Vec<f64>> = e.iter().map(|x| r.linear(x, "layer0.key", 2)).collect();
    let v: Vec<Vec<f64>> = e.iter().map(|x| r.linear(x, "layer0.value", 2)).collect();
    let dot = |a: &[f64], b: &[f64]| (a[0] * b[0] + a[1] * b[1]) / 2f64.sqrt();
    let mut want = Vec::new();
    for i in 0..2 {
        let (s0, s1) = (dot(&q[i], &k[0]), dot(&q[i], &k[1]));
        let p0 = 1.0 / (1.0 + (s1 - s0).exp());
        let ctx = [p0 * v[0][0] + (1.0 - p0) * v[1][0], p0 * v[0][1] + (1.0 - p0) * v[1][1]];
        let o = r.linear(&ctx, "layer0.output", 2);
        // LayerNorm over two values maps them to ±1 (before scale/shift)
        let y = [o[0] + e[i][0], o[1] + e[i][1]];
        let sign = (y[0] - y[1]).signum();
        let g = r.p("layer0.norm1.gamma");
        let bt = r.p("layer0.norm1.beta");
        let half = (y[0] - y[1]).abs() / 2.0;
        let unit = half / (half * half + LAYER_NORM_EPS).sqrt();
        let y = [sign * unit * g[0] + bt[0], -sign * unit * g[1] + bt[1]];
        let f: Vec<f64> = r
            .linear(&y, "layer0.ffn1", 8)
            .into_iter()
            .map(|t| 0.5 * t * (1.0 + (0.797_884_560_802_865_4 * (t + 0.044715 * t * t * t)).tanh()))
            .collect();
        let f = r.linear(&f, "layer0.ffn2", 2);
        want.extend(r.norm(&[f[0] + y[0], f[1] + y[1]], "layer0.norm2"));
    }
    let mut tape = Tape::<f64>::new();
    let bound = model.params.bind(&mut tape, false);
    let trace = model.forward(&mut tape, &bound, &batch, None).unwrap();
    close(tape.value(trace.hidden).data(), &want, 1e-12);
}

#[test]
fn decoder_and_masked_loss_oracles() {
    let ds = synthetic::random_with_features(9, 5, 8, 2);
    let cfg = ModelConfig { hidden_size: 4, heads: 2, layers: 1, max_len: 6, ..ModelConfig::default() };
    let layout = FeatureLayout::from_dataset(&ds, None).unwrap();
    let mut model = Model::<f64>::new(cfg, layout, 1).unwrap();
    scramble(&mut model, 8);
    let batch = batch_for(&ds, 6, 5, 3);
    let m = model.num_items();

    let mut tape = Tape::<f64>::new();
    let bound = model.params.bind(&mut tape, false);
    let trace = model.forward(&mut tape, &bound, &batch, None).unwrap();
    let hidden = tape.value(trace.hidden).data().to_vec();
    let positions = batch.masked_positions();
    let rows = model.hidden_rows(&mut tape, trace.hidden, &positions).unwrap();
    let scores = model.decode_scores(&mut tape, &bound, rows).unwrap();
    let loss = model.masked_loss(&mut tape, &bound, trace.hidden, &batch).unwrap();

    let r = Reference { store: &model.params };
    let bias = r.p("decoder.bias");
    let mut total = 0.0;
    for (n, &p) in positions.iter().enumerate() {
        let hrow = &hidden[p * 4..(p + 1) * 4];
        let logits: Vec<f64> = (1..=m)
            .map(|item| r.row("embed.item", item, 4).iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() + bias[item - 1])
            .collect();
        close(&tape.value(scores).data()[n * m..(n + 1) * m], &logits, 1e-12);
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        total += lse - logits[batch.labels[p] - 1];
    }
    let want = total / positions.len() as f64;
    assert!((tape.value(loss).data()[0] - want).abs() < 1e-12);
}

// ---------- optimizer ----------

#[test]
fn adam_trajectory_on_parabola() {
    let mut store = ParamStore::<f64>::new();
    store.add("x", Tensor::from_f64(&[1], &[3.0]).unwrap());
    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    let (mut x, mut m, mut v) = (3.0f64, 0.0f64, 0.0f64);
    for step in 1..=200 {
        let lr = 0.05;
        let g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(step));
        let vh = v / (1.0 - 0.999f64.powi(step));
        x -= lr * mh / (vh.sqrt() + 1e-8);

        let cur = store.get(store.id("x").unwrap()).data()[0];
        adam.update(&mut store, &[vec![2.0 * cur]], lr).unwrap();
        let got = store.get(store.id("x").unwrap()).data()[0];
        assert!((got - x).abs() < 1e-12, "step {step}: {got} vs {x}");
    }
    assert!(x.abs() < 0.5);
}
