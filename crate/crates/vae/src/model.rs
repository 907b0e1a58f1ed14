use jointsynth_nn::{Graph, ParamStore, Scalar, Tensor, Var};

use crate::config::{norm_groups, VaeConfig};
use crate::{Result, VaeError};

const LN_EPS: f64 = 1e-5;
const GN_EPS: f64 = 1e-5;

/// Parameter access mode: trainable nodes for the side being optimized,
/// constant nodes for a frozen network (no gradients computed toward it).
pub struct ParamSource<'a, S: Scalar> {
    pub store: &'a ParamStore<S>,
    pub trainable: bool,
}

impl<'a, S: Scalar> ParamSource<'a, S> {
    pub fn trainable(store: &'a ParamStore<S>) -> Self {
        ParamSource {
            store,
            trainable: true,
        }
    }

    pub fn frozen(store: &'a ParamStore<S>) -> Self {
        ParamSource {
            store,
            trainable: false,
        }
    }

    pub fn var(&self, g: &mut Graph<S>, name: &str) -> Var {
        if self.trainable {
            g.param(self.store, name)
        } else {
            g.input(self.store.get(name).clone())
        }
    }
}

/// One training batch, already tokenized.
pub struct BatchInput<S: Scalar> {
    /// [B, 1, D, H, W]
    pub volumes: Tensor<S>,
    /// [B, n_numeric] standardized numeric tokens
    pub numeric_tokens: Tensor<S>,
    /// per categorical feature: B category indices
    pub categorical_tokens: Vec<Vec<usize>>,
}

impl<S: Scalar> BatchInput<S> {
    pub fn batch_size(&self) -> usize {
        self.volumes.shape()[0]
    }
}

pub struct AttnVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

fn attn_vars<S: Scalar>(g: &mut Graph<S>, src: &ParamSource<S>, prefix: &str) -> AttnVars {
    AttnVars {
        wq: src.var(g, &format!("{prefix}.wq")),
        bq: src.var(g, &format!("{prefix}.bq")),
        wk: src.var(g, &format!("{prefix}.wk")),
        bk: src.var(g, &format!("{prefix}.bk")),
        wv: src.var(g, &format!("{prefix}.wv")),
        bv: src.var(g, &format!("{prefix}.bv")),
        wo: src.var(g, &format!("{prefix}.wo")),
        bo: src.var(g, &format!("{prefix}.bo")),
    }
}

/// Scaled dot-product attention over already-projected q/k/v of shape
/// [B, T, n_heads * d_head]: per head softmax(Q K^T / sqrt(d_head)) V, heads
/// re-concatenated. No projections, no residual.
pub fn attention_core<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
) -> Var {
    let (b, tq, inner) = {
        let s = g.shape(q);
        (s[0], s[1], s[2])
    };
    let tk = g.shape(k)[1];
    assert_eq!(inner % n_heads, 0);
    let dh = inner / n_heads;

    let split = |g: &mut Graph<S>, x: Var, t: usize| {
        let x = g.reshape(x, vec![b, t, n_heads, dh]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, vec![b * n_heads, t, dh])
    };
    let qh = split(g, q, tq);
    let kh = split(g, k, tk);
    let vh = split(g, v, tk);

    let kt = g.permute(kh, &[0, 2, 1]);
    let scores = g.bmm(qh, kt);
    let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let att = g.softmax_last(scaled);
    let ctx = g.bmm(att, vh);

    let ctx = g.reshape(ctx, vec![b, n_heads, tq, dh]);
    let ctx = g.permute(ctx, &[0, 2, 1, 3]);
    g.reshape(ctx, vec![b, tq, inner])
}

/// Projected attention without the residual: wo(core(wq q, wk kv, wv kv)) + bo.
fn attn_project<S: Scalar>(
    g: &mut Graph<S>,
    q_in: Var,
    kv_in: Var,
    p: &AttnVars,
    n_heads: usize,
) -> Var {
    let q = g.linear(q_in, p.wq, p.bq);
    let k = g.linear(kv_in, p.wk, p.bk);
    let v = g.linear(kv_in, p.wv, p.bv);
    let ctx = attention_core(g, q, k, v, n_heads);
    g.linear(ctx, p.wo, p.bo)
}

/// The cross-attention op: multi-head scaled dot-product attention with
/// output projection and a residual add onto the queries.
pub fn mha<S: Scalar>(
    g: &mut Graph<S>,
    q_in: Var,
    kv_in: Var,
    p: &AttnVars,
    n_heads: usize,
) -> Var {
    let projected = attn_project(g, q_in, kv_in, p, n_heads);
    g.add(q_in, projected)
}

/// Pre-LN transformer block: q += attn(LN(q), LN(kv)); q += FFN(LN(q)).
/// With `ablate_attention` the attention contribution is dropped (identical
/// to a zeroed output projection), the FFN half still runs.
fn block<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    prefix: &str,
    q: Var,
    kv: Var,
    n_heads: usize,
    ablate_attention: bool,
) -> Var {
    let mut q = q;
    if !ablate_attention {
        let g_q = src.var(g, &format!("{prefix}.ln_q.g"));
        let b_q = src.var(g, &format!("{prefix}.ln_q.b"));
        let g_kv = src.var(g, &format!("{prefix}.ln_kv.g"));
        let b_kv = src.var(g, &format!("{prefix}.ln_kv.b"));
        let qn = g.layer_norm(q, g_q, b_q, LN_EPS);
        let kvn = g.layer_norm(kv, g_kv, b_kv, LN_EPS);
        let p = attn_vars(g, src, &format!("{prefix}.attn"));
        let att = attn_project(g, qn, kvn, &p, n_heads);
        q = g.add(q, att);
    }
    let g_f = src.var(g, &format!("{prefix}.ln_f.g"));
    let b_f = src.var(g, &format!("{prefix}.ln_f.b"));
    let qn = g.layer_norm(q, g_f, b_f, LN_EPS);
    let w1 = src.var(g, &format!("{prefix}.ffn.w1"));
    let b1 = src.var(g, &format!("{prefix}.ffn.b1"));
    let w2 = src.var(g, &format!("{prefix}.ffn.w2"));
    let b2 = src.var(g, &format!("{prefix}.ffn.b2"));
    let h = g.linear(qn, w1, b1);
    let h = g.silu(h);
    let h = g.linear(h, w2, b2);
    g.add(q, h)
}

fn conv_gn_silu<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    conv: &str,
    gn: &str,
    x: Var,
    stride: usize,
    pad: usize,
    gn_groups: usize,
) -> Var {
    let w = src.var(g, &format!("{conv}.w"));
    let b = src.var(g, &format!("{conv}.b"));
    let h = g.conv3d(x, w, b, stride, pad);
    let channels = g.shape(h)[1];
    let gg = src.var(g, &format!("{gn}.g"));
    let gb = src.var(g, &format!("{gn}.b"));
    let h = g.group_norm(h, gg, gb, norm_groups(gn_groups, channels), GN_EPS);
    g.silu(h)
}

/// Adds a [T, dm] positional table onto a [B, T, dm] token stream.
fn add_positional<S: Scalar>(g: &mut Graph<S>, x: Var, pos: Var) -> Var {
    let (b, t, dm) = {
        let s = g.shape(x);
        (s[0], s[1], s[2])
    };
    let flat = g.reshape(x, vec![b, t * dm]);
    let pos_flat = g.reshape(pos, vec![t * dm]);
    let out = g.add_bias_row(flat, pos_flat);
    g.reshape(out, vec![b, t, dm])
}

/// Token embedding rows in schema order: numeric rows are token * w + b,
/// categorical rows are table lookups. Returns [B, n_features, d_tok].
fn embed_tokens_graph<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &VaeConfig,
    batch: &BatchInput<S>,
) -> Var {
    let b = batch.batch_size();
    let tab = &config.tabular;
    let num_w = src.var(g, "tab.num_embed.w");
    let num_b = src.var(g, "tab.num_embed.b");
    let tokens = g.input(batch.numeric_tokens.clone());
    let num_rows = g.numeric_embed(tokens, num_w, num_b); // [B, n_num, d_tok]

    let mut cat_rows = Vec::with_capacity(tab.n_categorical);
    for (j, idx) in batch.categorical_tokens.iter().enumerate() {
        let table = src.var(g, &format!("tab.cat_embed.{j}"));
        let rows = g.gather_rows(table, idx); // [B, d_tok]
        cat_rows.push(g.reshape(rows, vec![b, 1, config.d_tok]));
    }

    // interleave by schema slot order
    let mut pieces: Vec<Var> = Vec::with_capacity(tab.n_features());
    let mut num_i = 0usize;
    let mut cat_j = 0usize;
    for slot in 0..tab.n_features() {
        if tab.numeric_slots.contains(&slot) {
            let row = g.slice(num_rows, 1, num_i, 1);
            pieces.push(row);
            num_i += 1;
        } else {
            pieces.push(cat_rows[cat_j]);
            cat_j += 1;
        }
    }
    let mut out = pieces[0];
    for &p in &pieces[1..] {
        out = g.concat(1, out, p);
    }
    out
}

/// Joint encoder: image conv stack + tabular transformer, fused by image-grid
/// queries attending to tabular tokens. Returns (mu, logvar), each
/// [B, c_lat, d', h', w'], logvar clamped.
pub fn encode_joint<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &VaeConfig,
    batch: &BatchInput<S>,
    ablate_fusion: bool,
) -> Result<(Var, Var)> {
    let vs = batch.volumes.shape();
    let div = 1usize << config.n_down();
    if vs[2] % div != 0 || vs[3] % div != 0 || vs[4] % div != 0 {
        return Err(VaeError::Shape(format!(
            "volume shape {:?} not divisible by 2^{}",
            &vs[2..],
            config.n_down()
        )));
    }
    let b = batch.batch_size();
    let dm = config.d_model();

    // tabular path
    let tok = embed_tokens_graph(g, src, config, batch);
    let proj_w = src.var(g, "tabenc.proj.w");
    let proj_b = src.var(g, "tabenc.proj.b");
    let mut tab = g.linear(tok, proj_w, proj_b);
    let pos = src.var(g, "tabenc.pos");
    tab = add_positional(g, tab, pos);
    for i in 0..config.n_tab_layers {
        tab = block(g, src, &format!("tabenc.block{i}"), tab, tab, config.n_heads, false);
    }

    // image path
    let mut h = g.input(batch.volumes.clone());
    for i in 0..config.n_down() {
        h = conv_gn_silu(
            g,
            src,
            &format!("enc.conv{i}"),
            &format!("enc.gn{i}"),
            h,
            2,
            1,
            config.gn_groups,
        );
    }
    let grid = config.latent_grid();
    let p = grid.iter().product::<usize>();

    // fusion: grid positions as queries over tabular tokens
    let flat = g.reshape(h, vec![b, dm, p]);
    let mut q = g.permute(flat, &[0, 2, 1]); // [B, P, dm]
    let fuse_pos = src.var(g, "fuse.pos");
    q = add_positional(g, q, fuse_pos);
    for i in 0..config.n_fuse {
        q = block(
            g,
            src,
            &format!("fuse.block{i}"),
            q,
            tab,
            config.n_heads,
            ablate_fusion,
        );
    }
    let fused = g.permute(q, &[0, 2, 1]);
    let fused = g.reshape(fused, vec![b, dm, grid[0], grid[1], grid[2]]);

    let mu_w = src.var(g, "enc.mu.w");
    let mu_b = src.var(g, "enc.mu.b");
    let mu = g.conv3d(fused, mu_w, mu_b, 1, 0);
    let lv_w = src.var(g, "enc.logvar.w");
    let lv_b = src.var(g, "enc.logvar.b");
    let logvar = g.conv3d(fused, lv_w, lv_b, 1, 0);
    let logvar = g.clamp(logvar, config.logvar_clamp.0, config.logvar_clamp.1);
    Ok((mu, logvar))
}

/// z = mu + exp(0.5 * logvar) * eps
pub fn reparameterize<S: Scalar>(g: &mut Graph<S>, mu: Var, logvar: Var, eps: Tensor<S>) -> Var {
    let half = g.scale(logvar, 0.5);
    let sigma = g.exp(half);
    let noise = g.input(eps);
    let scaled = g.mul(sigma, noise);
    g.add(mu, scaled)
}

/// Latent sample back to a volume in [0, 1].
pub fn decode_image<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &VaeConfig,
    z: Var,
) -> Var {
    let mut h = conv_gn_silu(g, src, "dec.conv_in", "dec.gn_in", z, 1, 1, config.gn_groups);
    for i in 0..config.n_down() {
        let w = src.var(g, &format!("dec.up{i}.w"));
        let b = src.var(g, &format!("dec.up{i}.b"));
        let pad = if config.dec_kernels[i] == 4 { 1 } else { 0 };
        h = g.conv_transpose3d(h, w, b, 2, pad);
        let channels = g.shape(h)[1];
        let gg = src.var(g, &format!("dec.gn{i}.g"));
        let gb = src.var(g, &format!("dec.gn{i}.b"));
        h = g.group_norm(h, gg, gb, norm_groups(config.gn_groups, channels), GN_EPS);
        h = g.silu(h);
    }
    let w = src.var(g, "dec.conv_out.w");
    let b = src.var(g, "dec.conv_out.b");
    let out = g.conv3d(h, w, b, 1, 1);
    g.sigmoid(out)
}

/// Learned per-feature query tokens cross-attend over the flattened latent
/// grid; per-feature heads emit one real per numeric feature and K logits per
/// categorical feature.
pub fn decode_tabular<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &VaeConfig,
    z: Var,
) -> (Var, Vec<Var>) {
    let b = g.shape(z)[0];
    let dm = config.d_model();
    let tab = &config.tabular;
    let grid = config.latent_grid();
    let p = grid.iter().product::<usize>();

    let kv_w = src.var(g, "tabdec.kv.w");
    let kv_b = src.var(g, "tabdec.kv.b");
    let kv = g.conv3d(z, kv_w, kv_b, 1, 0); // [B, dm, grid]
    let kv = g.reshape(kv, vec![b, dm, p]);
    let mut kv = g.permute(kv, &[0, 2, 1]);
    let pos = src.var(g, "tabdec.pos");
    kv = add_positional(g, kv, pos);

    let query_table = src.var(g, "tabdec.query");
    let idx: Vec<usize> = (0..b).flat_map(|_| 0..tab.n_features()).collect();
    let q = g.gather_rows(query_table, &idx);
    let mut q = g.reshape(q, vec![b, tab.n_features(), dm]);
    for i in 0..config.n_fuse {
        q = block(g, src, &format!("tabdec.block{i}"), q, kv, config.n_heads, false);
    }

    // numeric heads: each numeric feature's token through its own column
    let num_w = src.var(g, "tabdec.num_head.w");
    let num_b = src.var(g, "tabdec.num_head.b");
    let mut numeric_cols = Vec::with_capacity(tab.n_numeric);
    for (i, &slot) in tab.numeric_slots.iter().enumerate() {
        let tok = g.slice(q, 1, slot, 1);
        let tok = g.reshape(tok, vec![b, dm]);
        let w_col = g.slice(num_w, 1, i, 1); // [dm, 1]
        let b_col = g.slice(num_b, 0, i, 1); // [1]
        let pred = g.matmul(tok, w_col);
        let pred = g.add_bias_row(pred, b_col);
        numeric_cols.push(pred);
    }
    let numeric_preds = if numeric_cols.is_empty() {
        g.input(Tensor::zeros(vec![b, 0]))
    } else {
        let mut out = numeric_cols[0];
        for &c in &numeric_cols[1..] {
            out = g.concat(1, out, c);
        }
        out
    };

    let mut categorical_logits = Vec::with_capacity(tab.n_categorical);
    for (j, &slot) in tab.categorical_slots.iter().enumerate() {
        let tok = g.slice(q, 1, slot, 1);
        let tok = g.reshape(tok, vec![b, dm]);
        let w = src.var(g, &format!("tabdec.cat_head.{j}.w"));
        let bb = src.var(g, &format!("tabdec.cat_head.{j}.b"));
        let logits = g.matmul(tok, w);
        let logits = g.add_bias_row(logits, bb);
        categorical_logits.push(logits);
    }
    (numeric_preds, categorical_logits)
}

/// 3D patch discriminator: stride-2 conv stack to a logit map.
pub fn discriminator<S: Scalar>(
    g: &mut Graph<S>,
    src: &ParamSource<S>,
    config: &VaeConfig,
    x: Var,
) -> Var {
    let mut h = x;
    for i in 0..config.disc_channels.len() {
        h = conv_gn_silu(
            g,
            src,
            &format!("disc.conv{i}"),
            &format!("disc.gn{i}"),
            h,
            2,
            1,
            config.gn_groups,
        );
    }
    let w = src.var(g, "disc.out.w");
    let b = src.var(g, "disc.out.b");
    g.conv3d(h, w, b, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::VaeConfig;
    use crate::params::init_vae_params;
    use jointsynth_nn::Rng;
    use jointsynth_tabular::{FeatureSpec, TabularSchema};

    fn tiny_schema() -> TabularSchema {
        TabularSchema::new(vec![
            FeatureSpec::numeric("a", ""),
            FeatureSpec::categorical("c", &["x", "y"]),
            FeatureSpec::numeric("b", ""),
        ])
        .unwrap()
    }

    fn tiny_config() -> VaeConfig {
        let mut cfg = VaeConfig::for_schema(&tiny_schema(), [16, 16, 16]);
        cfg.enc_channels = vec![4, 8];
        cfg.dec_channels = vec![8, 8, 4];
        cfg.dec_kernels = vec![4, 2];
        cfg.c_lat = 2;
        cfg.d_tok = 4;
        cfg.n_heads = 2;
        cfg.d_head = 4;
        cfg.n_fuse = 1;
        cfg.n_tab_layers = 1;
        cfg
    }

    fn tiny_batch(b: usize, rng: &mut Rng) -> BatchInput<f32> {
        BatchInput {
            volumes: Tensor::randn(vec![b, 1, 16, 16, 16], 0.3, rng),
            numeric_tokens: Tensor::randn(vec![b, 2], 1.0, rng),
            categorical_tokens: vec![(0..b).map(|i| i % 2).collect()],
        }
    }

    #[test]
    fn encoder_shapes_follow_downsampling() {
        let cfg = tiny_config();
        cfg.validate().unwrap();
        let store = init_vae_params::<f32>(&cfg);
        let mut rng = Rng::from_seed(1);
        let batch = tiny_batch(2, &mut rng);
        let mut g = Graph::new();
        let src = ParamSource::frozen(&store);
        let (mu, logvar) = encode_joint(&mut g, &src, &cfg, &batch, false).unwrap();
        assert_eq!(g.shape(mu), &[2, 2, 4, 4, 4]);
        assert_eq!(g.shape(logvar), &[2, 2, 4, 4, 4]);
    }

    #[test]
    fn indivisible_shape_is_error() {
        let schema = tiny_schema();
        let mut cfg = VaeConfig::for_schema(&schema, [12, 16, 16]);
        cfg.enc_channels = vec![4, 8, 8];
        cfg.dec_channels = vec![8, 8, 8, 4];
        cfg.dec_kernels = vec![4, 4, 4];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn decoder_restores_volume_shape_and_range() {
        let cfg = tiny_config();
        let store = init_vae_params::<f32>(&cfg);
        let mut rng = Rng::from_seed(2);
        let mut g = Graph::new();
        let src = ParamSource::frozen(&store);
        let z = g.input(Tensor::randn(vec![3, 2, 4, 4, 4], 2.0, &mut rng));
        let out = decode_image(&mut g, &src, &cfg, z);
        assert_eq!(g.shape(out), &[3, 1, 16, 16, 16]);
        for v in g.value(out).data() {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn tabular_decoder_arity_matches_schema() {
        let cfg = tiny_config();
        let store = init_vae_params::<f32>(&cfg);
        let mut rng = Rng::from_seed(3);
        let mut g = Graph::new();
        let src = ParamSource::frozen(&store);
        let z = g.input(Tensor::randn(vec![2, 2, 4, 4, 4], 1.0, &mut rng));
        let (num, cats) = decode_tabular(&mut g, &src, &cfg, z);
        assert_eq!(g.shape(num), &[2, 2]);
        assert_eq!(cats.len(), 1);
        assert_eq!(g.shape(cats[0]), &[2, 2]);
    }

    #[test]
    fn zeroed_output_projection_equals_ablated_run() {
        let cfg = tiny_config();
        let mut store = init_vae_params::<f32>(&cfg);
        for i in 0..cfg.n_fuse {
            let name = format!("fuse.block{i}.attn.wo");
            let shape = store.get(&name).shape().to_vec();
            store.set(&name, Tensor::zeros(shape));
            let name = format!("fuse.block{i}.attn.bo");
            let shape = store.get(&name).shape().to_vec();
            store.set(&name, Tensor::zeros(shape));
        }
        let mut rng = Rng::from_seed(4);
        let batch = tiny_batch(2, &mut rng);

        let mut g1 = Graph::new();
        let src1 = ParamSource::frozen(&store);
        let (mu_zeroed, _) = encode_joint(&mut g1, &src1, &cfg, &batch, false).unwrap();

        let mut g2 = Graph::new();
        let src2 = ParamSource::frozen(&store);
        let (mu_ablated, _) = encode_joint(&mut g2, &src2, &cfg, &batch, true).unwrap();

        let a = g1.value(mu_zeroed).data();
        let b = g2.value(mu_ablated).data();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x, y, "zeroed projection must equal the ablated path");
        }
    }

    #[test]
    fn attention_single_kv_row_passes_value_through() {
        // one key/value row: softmax over a single element is 1, so the
        // pre-projection context equals that value row for every query
        let mut g: Graph<f32> = Graph::new();
        let q = g.input(Tensor::randn(vec![1, 3, 4], 1.0, &mut Rng::from_seed(5)));
        let k = g.input(Tensor::randn(vec![1, 1, 4], 1.0, &mut Rng::from_seed(6)));
        let v_data = Tensor::randn(vec![1, 1, 4], 1.0, &mut Rng::from_seed(7));
        let v = g.input(v_data.clone());
        let out = attention_core(&mut g, q, k, v, 2);
        let out = g.value(out);
        for row in 0..3 {
            for c in 0..4 {
                assert!((out.data()[row * 4 + c] - v_data.data()[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn attention_identical_keys_average_uniformly() {
        let mut g: Graph<f32> = Graph::new();
        let q = g.input(Tensor::randn(vec![1, 2, 4], 1.0, &mut Rng::from_seed(8)));
        // two identical key rows, distinct values -> weights 1/2 each
        let k_row = Tensor::randn(vec![1, 1, 4], 1.0, &mut Rng::from_seed(9));
        let mut k_data = k_row.data().to_vec();
        k_data.extend_from_slice(k_row.data());
        let k = g.input(Tensor::from_vec(vec![1, 2, 4], k_data));
        let v = g.input(Tensor::from_vec(
            vec![1, 2, 4],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        ));
        let out = attention_core(&mut g, q, k, v, 1);
        let out = g.value(out);
        for row in 0..2 {
            assert!((out.data()[row * 4] - 0.5).abs() < 1e-6);
            assert!((out.data()[row * 4 + 1] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn mha_residual_with_zero_projection_is_identity() {
        // the cross-attention op adds its projected context onto the queries;
        // a zero output projection must therefore return the queries unchanged
        let mut store: jointsynth_nn::ParamStore<f64> = jointsynth_nn::ParamStore::new();
        let mut rng = Rng::from_seed(31);
        for name in ["wq", "wk", "wv"] {
            store.register(name, Tensor::randn(vec![4, 4], 0.5, &mut rng));
        }
        store.register("wo", Tensor::zeros(vec![4, 4]));
        for name in ["bq", "bk", "bv", "bo"] {
            store.register(name, Tensor::zeros(vec![4]));
        }
        let mut g = Graph::new();
        let src = ParamSource::frozen(&store);
        let p = AttnVars {
            wq: src.var(&mut g, "wq"),
            bq: src.var(&mut g, "bq"),
            wk: src.var(&mut g, "wk"),
            bk: src.var(&mut g, "bk"),
            wv: src.var(&mut g, "wv"),
            bv: src.var(&mut g, "bv"),
            wo: src.var(&mut g, "wo"),
            bo: src.var(&mut g, "bo"),
        };
        let q = g.input(Tensor::randn(vec![1, 3, 4], 1.0, &mut rng));
        let kv = g.input(Tensor::randn(vec![1, 2, 4], 1.0, &mut rng));
        let out = mha(&mut g, q, kv, &p, 2);
        assert_eq!(g.value(out).data(), g.value(q).data());
    }

    #[test]
    fn attention_matches_hand_softmax() {
        // 2 queries x 2 keys, d = 1 head of width 2, identity projections
        let mut g: Graph<f64> = Graph::new();
        let q = g.input(Tensor::from_vec(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let k = g.input(Tensor::from_vec(vec![1, 2, 2], vec![2.0, 0.0, 0.0, 2.0]));
        let v = g.input(Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let out = attention_core(&mut g, q, k, v, 1);
        let got = g.value(out).data().to_vec();
        // row 0: scores = (2, 0)/sqrt(2); row 1: (0, 2)/sqrt(2)
        let s = 2.0 / 2.0f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        let expect = [
            w0 * 1.0 + (1.0 - w0) * 3.0,
            w0 * 2.0 + (1.0 - w0) * 4.0,
            (1.0 - w0) * 1.0 + w0 * 3.0,
            (1.0 - w0) * 2.0 + w0 * 4.0,
        ];
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn reparameterize_examples() {
        let mut g: Graph<f64> = Graph::new();
        let mu = g.input(Tensor::from_vec(vec![4], vec![0.5, -1.0, 2.0, 0.0]));
        let logvar = g.input(Tensor::zeros(vec![4]));
        // eps = 0 -> z = mu
        let z = reparameterize(&mut g, mu, logvar, Tensor::zeros(vec![4]));
        assert_eq!(g.value(z).data(), g.value(mu).data());
        // logvar = 0, eps = 1 -> z = mu + 1
        let z = reparameterize(&mut g, mu, logvar, Tensor::full(vec![4], 1.0));
        let zd = g.value(z).data();
        for (zv, mv) in zd.iter().zip(g.value(mu).data()) {
            assert!((zv - (mv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterize_monte_carlo_variance() {
        // logvar = 0: sample variance of z over many draws ~ 1.0 +/- 0.02
        let mut rng = Rng::from_seed(10);
        let n = 100_000;
        let mut g: Graph<f64> = Graph::new();
        let mu = g.input(Tensor::zeros(vec![n]));
        let logvar = g.input(Tensor::zeros(vec![n]));
        let eps = Tensor::from_vec(vec![n], (0..n).map(|_| rng.normal()).collect());
        let z = reparameterize(&mut g, mu, logvar, eps);
        let zd = g.value(z).data();
        let mean: f64 = zd.iter().sum::<f64>() / n as f64;
        let var: f64 = zd.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
