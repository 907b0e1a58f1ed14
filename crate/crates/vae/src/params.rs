use jointsynth_nn::{ParamStore, Rng, Scalar, Tensor};

use crate::config::VaeConfig;

fn conv_w<S: Scalar>(co: usize, ci: usize, k: usize, rng: &mut Rng) -> Tensor<S> {
    let fan_in = ci * k * k * k;
    Tensor::randn(vec![co, ci, k, k, k], (2.0 / fan_in as f64).sqrt(), rng)
}

fn convt_w<S: Scalar>(ci: usize, co: usize, k: usize, rng: &mut Rng) -> Tensor<S> {
    let fan_in = ci * k * k * k;
    Tensor::randn(vec![ci, co, k, k, k], (2.0 / fan_in as f64).sqrt(), rng)
}

fn linear_w<S: Scalar>(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor<S> {
    Tensor::randn(vec![fan_in, fan_out], (1.0 / fan_in as f64).sqrt(), rng)
}

fn register_attn<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_model: usize,
    inner: usize,
    rng: &mut Rng,
) {
    store.register(&format!("{prefix}.wq"), linear_w(d_model, inner, rng));
    store.register(&format!("{prefix}.bq"), Tensor::zeros(vec![inner]));
    store.register(&format!("{prefix}.wk"), linear_w(d_model, inner, rng));
    store.register(&format!("{prefix}.bk"), Tensor::zeros(vec![inner]));
    store.register(&format!("{prefix}.wv"), linear_w(d_model, inner, rng));
    store.register(&format!("{prefix}.bv"), Tensor::zeros(vec![inner]));
    store.register(&format!("{prefix}.wo"), linear_w(inner, d_model, rng));
    store.register(&format!("{prefix}.bo"), Tensor::zeros(vec![d_model]));
}

fn register_ln<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, dim: usize) {
    store.register(&format!("{prefix}.g"), Tensor::full(vec![dim], S::ONE));
    store.register(&format!("{prefix}.b"), Tensor::zeros(vec![dim]));
}

fn register_ffn<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_model: usize,
    mult: usize,
    rng: &mut Rng,
) {
    let hidden = d_model * mult;
    store.register(&format!("{prefix}.w1"), linear_w(d_model, hidden, rng));
    store.register(&format!("{prefix}.b1"), Tensor::zeros(vec![hidden]));
    store.register(&format!("{prefix}.w2"), linear_w(hidden, d_model, rng));
    store.register(&format!("{prefix}.b2"), Tensor::zeros(vec![d_model]));
}

fn register_block<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    d_model: usize,
    inner: usize,
    ffn_mult: usize,
    rng: &mut Rng,
) {
    register_ln(store, &format!("{prefix}.ln_q"), d_model);
    register_ln(store, &format!("{prefix}.ln_kv"), d_model);
    register_attn(store, &format!("{prefix}.attn"), d_model, inner, rng);
    register_ln(store, &format!("{prefix}.ln_f"), d_model);
    register_ffn(store, &format!("{prefix}.ffn"), d_model, ffn_mult, rng);
}

/// Builds the full generator-side parameter set under canonical path names.
pub fn init_vae_params<S: Scalar>(config: &VaeConfig) -> ParamStore<S> {
    let mut rng = Rng::from_seed(config.init_seed);
    let mut store = ParamStore::new();
    let dm = config.d_model();
    let inner = config.n_heads * config.d_head;
    let tab = &config.tabular;

    // tabular token embeddings
    store.register(
        "tab.num_embed.w",
        Tensor::randn(vec![tab.n_numeric, config.d_tok], (1.0 / config.d_tok as f64).sqrt(), &mut rng),
    );
    store.register(
        "tab.num_embed.b",
        Tensor::randn(vec![tab.n_numeric, config.d_tok], (1.0 / config.d_tok as f64).sqrt(), &mut rng),
    );
    for (j, &k) in tab.vocab_sizes.iter().enumerate() {
        store.register(
            &format!("tab.cat_embed.{j}"),
            Tensor::randn(vec![k, config.d_tok], (1.0 / config.d_tok as f64).sqrt(), &mut rng),
        );
    }

    // tabular encoder: projection + positional embedding + self-attn blocks
    store.register("tabenc.proj.w", linear_w(config.d_tok, dm, &mut rng));
    store.register("tabenc.proj.b", Tensor::zeros(vec![dm]));
    store.register(
        "tabenc.pos",
        Tensor::randn(vec![tab.n_features(), dm], 0.02, &mut rng),
    );
    for i in 0..config.n_tab_layers {
        register_block(&mut store, &format!("tabenc.block{i}"), dm, inner, config.ffn_mult, &mut rng);
    }

    // image encoder convs
    let mut c_in = 1usize;
    for (i, &c_out) in config.enc_channels.iter().enumerate() {
        store.register(&format!("enc.conv{i}.w"), conv_w(c_out, c_in, 3, &mut rng));
        store.register(&format!("enc.conv{i}.b"), Tensor::zeros(vec![c_out]));
        register_ln(&mut store, &format!("enc.gn{i}"), c_out);
        c_in = c_out;
    }

    // fusion: positional embedding over the latent grid + cross-attn blocks
    store.register(
        "fuse.pos",
        Tensor::randn(vec![config.n_latent_tokens(), dm], 0.02, &mut rng),
    );
    for i in 0..config.n_fuse {
        register_block(&mut store, &format!("fuse.block{i}"), dm, inner, config.ffn_mult, &mut rng);
    }

    // latent heads (1x1x1 convs)
    store.register("enc.mu.w", conv_w(config.c_lat, dm, 1, &mut rng));
    store.register("enc.mu.b", Tensor::zeros(vec![config.c_lat]));
    store.register("enc.logvar.w", conv_w(config.c_lat, dm, 1, &mut rng));
    store.register("enc.logvar.b", Tensor::zeros(vec![config.c_lat]));

    // image decoder
    store.register(
        "dec.conv_in.w",
        conv_w(config.dec_channels[0], config.c_lat, 3, &mut rng),
    );
    store.register("dec.conv_in.b", Tensor::zeros(vec![config.dec_channels[0]]));
    register_ln(&mut store, "dec.gn_in", config.dec_channels[0]);
    for i in 0..config.n_down() {
        let (ci, co) = (config.dec_channels[i], config.dec_channels[i + 1]);
        store.register(
            &format!("dec.up{i}.w"),
            convt_w(ci, co, config.dec_kernels[i], &mut rng),
        );
        store.register(&format!("dec.up{i}.b"), Tensor::zeros(vec![co]));
        register_ln(&mut store, &format!("dec.gn{i}"), co);
    }
    let c_last = *config.dec_channels.last().unwrap();
    store.register("dec.conv_out.w", conv_w(1, c_last, 3, &mut rng));
    store.register("dec.conv_out.b", Tensor::zeros(vec![1]));

    // tabular decoder: learned per-feature queries over the latent grid
    store.register(
        "tabdec.query",
        Tensor::randn(vec![tab.n_features(), dm], 0.02, &mut rng),
    );
    store.register("tabdec.kv.w", conv_w(dm, config.c_lat, 1, &mut rng));
    store.register("tabdec.kv.b", Tensor::zeros(vec![dm]));
    store.register(
        "tabdec.pos",
        Tensor::randn(vec![config.n_latent_tokens(), dm], 0.02, &mut rng),
    );
    for i in 0..config.n_fuse {
        register_block(&mut store, &format!("tabdec.block{i}"), dm, inner, config.ffn_mult, &mut rng);
    }
    store.register("tabdec.num_head.w", linear_w(dm, tab.n_numeric.max(1), &mut rng));
    store.register("tabdec.num_head.b", Tensor::zeros(vec![tab.n_numeric.max(1)]));
    for (j, &k) in tab.vocab_sizes.iter().enumerate() {
        store.register(&format!("tabdec.cat_head.{j}.w"), linear_w(dm, k, &mut rng));
        store.register(&format!("tabdec.cat_head.{j}.b"), Tensor::zeros(vec![k]));
    }

    store
}

/// 3D patch discriminator parameters.
pub fn init_discriminator_params<S: Scalar>(config: &VaeConfig) -> ParamStore<S> {
    let mut rng = Rng::from_seed(config.init_seed ^ 0xD15C);
    let mut store = ParamStore::new();
    let mut c_in = 1usize;
    for (i, &c_out) in config.disc_channels.iter().enumerate() {
        store.register(&format!("disc.conv{i}.w"), conv_w(c_out, c_in, 4, &mut rng));
        store.register(&format!("disc.conv{i}.b"), Tensor::zeros(vec![c_out]));
        register_ln(&mut store, &format!("disc.gn{i}"), c_out);
        c_in = c_out;
    }
    store.register("disc.out.w", conv_w(1, c_in, 3, &mut rng));
    store.register("disc.out.b", Tensor::zeros(vec![1]));
    store
}
