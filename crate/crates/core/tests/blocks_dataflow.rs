//! Block-level dataflow oracles and identities.

mod common;

use common::{conv2d_oracle, max_rel_diff, rand_tensor, seeded};
use lf_yolo_core::blocks::{
    init_layers, Cbl, Efe, EfeSpec, GhostConv, GhostSpec, Rmf, RmfSpec,
};
use lf_yolo_core::exec::{Executor, InferExec, Recorder};
use lf_yolo_core::graph::Graph;
use lf_yolo_core::ops::{concat_channels, slice_channels};
use lf_yolo_core::params::{Initializer, ParamStore, BN_EPS};
use lf_yolo_core::tensor::{Conv2dCfg, Tensor};
use rand::Rng;

fn store_for(plans: &[lf_yolo_core::blocks::LayerPlan], seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed);
    init_layers(plans, &mut store, &mut init).unwrap();
    store
}

/// Randomize BN affine/statistics so the normalization path is nontrivial.
fn randomize_bn(store: &mut ParamStore, seed: u64) {
    let mut rng = seeded(seed);
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        if name.ends_with(".gamma") || name.ends_with(".running_var") {
            for v in store.get_mut(&name).unwrap().data_mut() {
                *v = rng.random_range(0.5..1.5);
            }
        } else if name.ends_with(".beta") || name.ends_with(".running_mean") {
            for v in store.get_mut(&name).unwrap().data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
}

fn infer_forward<F>(store: &ParamStore, x: &Tensor, f: F) -> Tensor
where
    F: FnOnce(&mut InferExec, &std::rc::Rc<Tensor>) -> std::rc::Rc<Tensor>,
{
    let mut ex = InferExec::new(store);
    let xv = ex.input(x.clone());
    let y = f(&mut ex, &xv);
    (*y).clone()
}

/// Ghost conv composed from the brute-force conv oracle plus scalar
/// batch-norm (inference statistics) and leaky-relu formulas.
fn ghost_oracle(store: &ParamStore, prefix: &str, spec: &GhostSpec, x: &Tensor) -> Tensor {
    let primary_w = store.get(&format!("{prefix}.primary.weight")).unwrap();
    let intrinsic = conv2d_oracle(x, primary_w, None, &Conv2dCfg::same(spec.primary_kernel, 1));
    let merged = if spec.ratio_s > 1 {
        let cheap_w = store.get(&format!("{prefix}.cheap.weight")).unwrap();
        let cfg = Conv2dCfg::same(spec.cheap_kernel, spec.dilation).with_groups(spec.intrinsic());
        let ghosts = conv2d_oracle(&intrinsic, cheap_w, None, &cfg);
        concat_channels(&[&intrinsic, &ghosts]).unwrap()
    } else {
        intrinsic
    };
    let gamma = store.get(&format!("{prefix}.bn.gamma")).unwrap().data();
    let beta = store.get(&format!("{prefix}.bn.beta")).unwrap().data();
    let rm = store.get(&format!("{prefix}.bn.running_mean")).unwrap().data();
    let rv = store.get(&format!("{prefix}.bn.running_var")).unwrap().data();
    let (n, c, h, w) = merged.dims();
    Tensor::from_fn((n, c, h, w), |bn, ch, y, xx| {
        let v = merged.get(bn, ch, y, xx);
        let norm = (v - rm[ch]) / (rv[ch] + BN_EPS).sqrt() * gamma[ch] + beta[ch];
        if norm >= 0.0 {
            norm
        } else {
            0.1 * norm
        }
    })
}

#[test]
fn ghost_conv_matches_composed_oracle() {
    let mut rng = seeded(41);
    for _ in 0..20 {
        let c_in = 2 * rng.random_range(1..4usize);
        let c_out = 2 * rng.random_range(1..4usize);
        let spec = GhostSpec::new(c_in, c_out);
        let gc = GhostConv::new("g", spec).unwrap();
        let mut store = store_for(&gc.plan(), rng.random());
        randomize_bn(&mut store, rng.random());
        let x = rand_tensor(&mut rng, (1, c_in, 6, 6));
        let got = infer_forward(&store, &x, |ex, xv| gc.forward(ex, xv).unwrap());
        let want = ghost_oracle(&store, "g", &spec, &x);
        assert!(max_rel_diff(&got, &want) < 1e-12);
    }
}

#[test]
fn gd_conv_matches_dilated_oracle_and_receptive_field() {
    let mut rng = seeded(43);
    // d = 5, cheap 3x3: effective receptive field of the cheap op is 11x11
    let spec = GhostSpec::new(4, 4).with_dilation(5);
    assert_eq!(5 * (3 - 1) + 1, 11);
    let gc = GhostConv::new("g", spec).unwrap();
    let mut store = store_for(&gc.plan(), 7);
    randomize_bn(&mut store, 8);
    let x = rand_tensor(&mut rng, (1, 4, 13, 13));
    let got = infer_forward(&store, &x, |ex, xv| gc.forward(ex, xv).unwrap());
    let want = ghost_oracle(&store, "g", &spec, &x);
    assert!(max_rel_diff(&got, &want) < 1e-12);
}

#[test]
fn gd_conv_dilation_one_is_plain_ghost_bit_exact() {
    let mut rng = seeded(47);
    let plain = GhostConv::new("g", GhostSpec::new(6, 8)).unwrap();
    let dilated = GhostConv::new("g", GhostSpec::new(6, 8).with_dilation(1)).unwrap();
    let mut store = store_for(&plain.plan(), 9);
    randomize_bn(&mut store, 10);
    let x = rand_tensor(&mut rng, (1, 6, 7, 7));
    let a = infer_forward(&store, &x, |ex, xv| plain.forward(ex, xv).unwrap());
    let b = infer_forward(&store, &x, |ex, xv| dilated.forward(ex, xv).unwrap());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert_eq!(p.to_bits(), q.to_bits());
    }
}

#[test]
fn ghost_ratio_one_is_cbl_bit_exact() {
    let mut rng = seeded(53);
    let ghost = GhostConv::new("b", GhostSpec::new(5, 7).with_ratio(1).with_primary_kernel(3)).unwrap();
    let cbl = Cbl::new("b", 5, 7, 3, 1).unwrap();
    // align parameter names: ghost uses .primary/.bn, cbl uses .conv/.bn
    let mut g_store = store_for(&ghost.plan(), 12);
    randomize_bn(&mut g_store, 13);
    let mut c_store = ParamStore::new();
    for (name, t) in g_store.iter() {
        let renamed = name.replace(".primary.", ".conv.");
        c_store.insert(renamed, t.clone()).unwrap();
    }
    let x = rand_tensor(&mut rng, (1, 5, 6, 6));
    let a = infer_forward(&g_store, &x, |ex, xv| ghost.forward(ex, xv).unwrap());
    let b = infer_forward(&c_store, &x, |ex, xv| cbl.forward(ex, xv).unwrap());
    for (p, q) in a.data().iter().zip(b.data()) {
        assert_eq!(p.to_bits(), q.to_bits());
    }
}

#[test]
fn ghost_delta_kernel_copies_intrinsic_channels() {
    // depthwise cheap op with a centered delta kernel makes ghosts equal
    // the intrinsic maps pre-normalization; identity BN keeps them equal.
    let mut rng = seeded(59);
    let spec = GhostSpec::new(4, 8);
    let gc = GhostConv::new("g", spec).unwrap();
    let mut store = store_for(&gc.plan(), 15);
    let cheap = store.get_mut("g.cheap.weight").unwrap();
    for v in cheap.data_mut() {
        *v = 0.0;
    }
    for g in 0..4 {
        cheap.set(g, 0, 1, 1, 1.0);
    }
    let x = rand_tensor(&mut rng, (1, 4, 5, 5));
    let y = infer_forward(&store, &x, |ex, xv| gc.forward(ex, xv).unwrap());
    let (_, c, _, _) = y.dims();
    assert_eq!(c, 8);
    let intrinsic = slice_channels(&y, 0, 4).unwrap();
    let ghosts = slice_channels(&y, 4, 4).unwrap();
    assert_eq!(intrinsic, ghosts);
}

#[test]
fn gd_conv_constant_field_stays_constant() {
    // constant input, delta-initialized cheap op, flattened primary: no
    // dilation rate can break translation invariance (the centered delta
    // tap never leaves the image under same padding)
    for d in [1usize, 5, 9] {
        let spec = GhostSpec::new(3, 6).with_dilation(d);
        let gc = GhostConv::new("g", spec).unwrap();
        let mut store = store_for(&gc.plan(), 90 + d as u64);
        {
            let cheap = store.get_mut("g.cheap.weight").unwrap();
            for v in cheap.data_mut() {
                *v = 0.0;
            }
            for gch in 0..3 {
                cheap.set(gch, 0, 1, 1, 1.0);
            }
        }
        let x = Tensor::full((1, 3, 2 * d + 5, 2 * d + 5), 0.75);
        let y = infer_forward(&store, &x, |ex, xv| gc.forward(ex, xv).unwrap());
        let (_, c, h, w) = y.dims();
        for ch in 0..c {
            let v0 = y.get(0, ch, 0, 0);
            for yy in 0..h {
                for xx in 0..w {
                    assert_eq!(y.get(0, ch, yy, xx), v0, "d={d} ch={ch}");
                }
            }
        }
    }
}

#[test]
fn cbl_identity_composition_passes_positive_input_through() {
    let cbl = Cbl::new("c", 3, 3, 1, 1).unwrap();
    let mut store = store_for(&cbl.plan(), 95);
    {
        let w = store.get_mut("c.conv.weight").unwrap();
        for v in w.data_mut() {
            *v = 0.0;
        }
        for ch in 0..3 {
            w.set(ch, ch, 0, 0, 1.0);
        }
    }
    // unit batch norm made exact: running_var + eps = 1
    for v in store.get_mut("c.bn.running_var").unwrap().data_mut() {
        *v = 1.0 - lf_yolo_core::params::BN_EPS;
    }
    let x = Tensor::from_fn((1, 3, 4, 4), |_, c, y, xx| 0.5 + (c + y + xx) as f64 * 0.1);
    let y = infer_forward(&store, &x, |ex, xv| cbl.forward(ex, xv).unwrap());
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn residual_reference_forward_shape() {
    use lf_yolo_core::blocks::ResidualRef;
    let mut rng = seeded(99);
    let rr = ResidualRef::new("r", 128, 256).unwrap();
    let store = store_for(&rr.plan(), 98);
    let x = rand_tensor(&mut rng, (1, 128, 6, 6));
    let y = infer_forward(&store, &x, |ex, xv| rr.forward(ex, xv).unwrap());
    assert_eq!(y.dims(), (1, 256, 6, 6));
}

#[test]
fn efe_preserves_spatial_dims() {
    let mut rng = seeded(61);
    for (h, w) in [(5usize, 9usize), (8, 8), (11, 4)] {
        let efe = Efe::new("e", EfeSpec::new(8, 12)).unwrap();
        let store = store_for(&efe.plan(), 20);
        let x = rand_tensor(&mut rng, (1, 8, h, w));
        let y = infer_forward(&store, &x, |ex, xv| efe.forward(ex, xv).unwrap());
        assert_eq!(y.dims(), (1, 12, h, w));
    }
}

#[test]
fn efe_zero_transform_branch_doubles_identity_slice() {
    // With the transform branch and compression zeroed out except for an
    // identity-configured second conv on the identity slice, the residual
    // doubles the first conv's output on those channels.
    let m = 8usize;
    let efe = Efe::new("e", EfeSpec::new(4, m)).unwrap();
    let mut store = store_for(&efe.plan(), 33);
    // zero every transform-branch conv weight
    for name in ["e.gc1.primary.weight", "e.gc1.cheap.weight", "e.gc2.primary.weight", "e.gc2.cheap.weight"] {
        for v in store.get_mut(name).unwrap().data_mut() {
            *v = 0.0;
        }
    }
    // keep conv1 outputs strictly positive so both leaky-relus are identity
    for v in store.get_mut("e.conv1.bn.gamma").unwrap().data_mut() {
        *v = 0.2;
    }
    for v in store.get_mut("e.conv1.bn.beta").unwrap().data_mut() {
        *v = 3.0;
    }
    // second 1x1 conv: place the identity slice (channels 0..m/4 of the
    // merged 2m tensor) back onto the first m/4 output channels, with its
    // batch norm made an exact identity (running_var + eps = 1)
    {
        let w2 = store.get_mut("e.conv2.conv.weight").unwrap();
        for v in w2.data_mut() {
            *v = 0.0;
        }
        for ch in 0..m / 4 {
            w2.set(ch, ch, 0, 0, 1.0);
        }
    }
    for v in store.get_mut("e.conv2.bn.running_var").unwrap().data_mut() {
        *v = 1.0 - lf_yolo_core::params::BN_EPS;
    }
    let mut rng = seeded(34);
    let x = rand_tensor(&mut rng, (1, 4, 6, 6));

    let y = infer_forward(&store, &x, |ex, xv| efe.forward(ex, xv).unwrap());
    // oracle: conv1 output o; expected identity-slice output = 2 * o[ch]
    let conv1 = Cbl::new("e.conv1", 4, m, 1, 1).unwrap();
    let o = infer_forward(&store, &x, |ex, xv| conv1.forward(ex, xv).unwrap());
    for ch in 0..m / 4 {
        for yy in 0..6 {
            for xx in 0..6 {
                let got = y.get(0, ch, yy, xx);
                let want = 2.0 * o.get(0, ch, yy, xx);
                assert!((got - want).abs() < 1e-12, "ch {ch} ({got} vs {want})");
            }
        }
    }
}

#[test]
fn rmf_channel_law_and_identity_branch() {
    let mut rng = seeded(67);
    let rmf = Rmf::new("r", RmfSpec::new(8)).unwrap();
    let mut store = store_for(&rmf.plan(), 44);
    randomize_bn(&mut store, 45);
    let x = rand_tensor(&mut rng, (1, 8, 9, 9));
    let y = infer_forward(&store, &x, |ex, xv| rmf.forward(ex, xv).unwrap());
    assert_eq!(y.dims(), (1, 48, 9, 9));

    // branch 1 pools with kernel 1 (identity); its d=1 ghost conv applied
    // directly to x must reproduce the first 4 output channels.
    let gc = GhostConv::new("r.b1.d1", GhostSpec::new(8, 4)).unwrap();
    let direct = infer_forward(&store, &x, |ex, xv| gc.forward(ex, xv).unwrap());
    let first = slice_channels(&y, 0, 4).unwrap();
    for (p, q) in first.data().iter().zip(direct.data()) {
        assert_eq!(p.to_bits(), q.to_bits());
    }
}

#[test]
fn rmf_output_is_branch_block_concatenation() {
    // permuting which dilation block we read reproduces each GD output:
    // channel layout is [b1d1, b1d5, b1d9, b2d1, ...].
    let mut rng = seeded(71);
    let spec = RmfSpec::new(4);
    let rmf = Rmf::new("r", spec.clone()).unwrap();
    let mut store = store_for(&rmf.plan(), 72);
    randomize_bn(&mut store, 73);
    let x = rand_tensor(&mut rng, (1, 4, 8, 8));
    let y = infer_forward(&store, &x, |ex, xv| rmf.forward(ex, xv).unwrap());

    let bw = spec.branch_channels();
    for (bi, &pk) in spec.pool_kernels.iter().enumerate() {
        let pooled = common::maxpool_oracle(&x, pk, 1, (pk - 1) / 2);
        for (di, &d) in spec.dilations.iter().enumerate() {
            let gspec = GhostSpec::new(4, bw).with_dilation(d);
            let want = ghost_oracle(&store, &format!("r.b{}.d{}", bi + 1, d), &gspec, &pooled);
            let block = (bi * spec.dilations.len() + di) * bw;
            let got = slice_channels(&y, block, bw).unwrap();
            assert!(max_rel_diff(&got, &want) < 1e-12, "branch {bi} dilation {d}");
        }
    }
}

#[test]
fn recorded_and_immediate_forward_agree_bit_exactly() {
    let mut rng = seeded(79);
    let efe = Efe::new("e", EfeSpec::new(8, 8)).unwrap();
    let mut store = store_for(&efe.plan(), 80);
    randomize_bn(&mut store, 81);
    let x = rand_tensor(&mut rng, (1, 8, 6, 6));

    let immediate = infer_forward(&store, &x, |ex, xv| efe.forward(ex, xv).unwrap());
    let mut graph = Graph::new();
    let mut rec = Recorder::new(&mut graph, &store, false);
    let xv = rec.input(x.clone());
    let y = efe.forward(&mut rec, &xv).unwrap();
    let recorded = graph.value(y);
    for (p, q) in immediate.data().iter().zip(recorded.data()) {
        assert_eq!(p.to_bits(), q.to_bits());
    }
}

#[test]
fn concat_then_slice_is_identity() {
    let mut rng = seeded(83);
    for _ in 0..10 {
        let count = rng.random_range(2..5usize);
        let parts: Vec<Tensor> = (0..count)
            .map(|_| {
                let c = rng.random_range(1..5usize);
                rand_tensor(&mut rng, (1, c, 4, 4))
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        let mut start = 0;
        for p in &parts {
            let len = p.dims().1;
            assert_eq!(&slice_channels(&cat, start, len).unwrap(), p);
            start += len;
        }
    }
}
