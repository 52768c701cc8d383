//! Library results checked against independent oracles and reference figures.

mod common;

use rand::Rng;
use psim_core::cluster::{cluster_values, cluster_weights, init_centroids_density, lloyd_1d, required_dac_bits};
use psim_core::dataflow::{chunk_work, compress_conv, compress_fc, unroll_conv};
use psim_core::explore::{compress, evaluate, explore, sweep_arch, EvalSet, ExplorationGrid, LayerSubset, Objective};
use psim_core::fixtures::{self, ModelBuilder};
use psim_core::model::{
    count_parameters, load_model, read_manifest, reference_forward, save_model, Artifact, LayerKind, Tensor,
};
use psim_core::photonic::{quantize, vdu_pass, DeviceParams, OperandRanges, QuantSpec, UnitKind, Vdu};
use psim_core::schedule::{quant_for, schedule_layer, simulate, SimSetup, VduConfig};
use psim_core::sparsify::{count_nonzero, layer_sparsity_profile, prune, SparsityPlan};

#[test]
fn reference_forward_matches_naive_loops() {
    for seed in 0..5 {
        let m = ModelBuilder::new("three", vec![3, 9, 9], seed)
            .conv(4, 3, 2, 1, true)
            .relu()
            .conv(5, 2, 1, 0, false)
            .max_pool(2, 1)
            .fc(7, true)
            .build()
            .unwrap();
        let x = fixtures::random_input(&m.input_shape, seed + 100);
        let got = reference_forward(&m, &x).unwrap();
        let want = common::naive_forward(&m, &x);
        assert!(common::rel_linf(got.data(), &want) <= 1e-12);
    }
}

#[test]
fn fixture_references_match_naive_loops() {
    for m in [fixtures::toy_cnn(3), fixtures::svhn_like(3)] {
        let x = fixtures::random_input(&m.input_shape, 1);
        let got = reference_forward(&m, &x).unwrap();
        assert!(common::rel_linf(got.data(), &common::naive_forward(&m, &x)) <= 1e-12);
    }
}

#[test]
fn fixture_reference_figures() {
    let svhn = fixtures::svhn_like(0);
    let kinds: Vec<LayerKind> = svhn.parameterized_layers().iter().map(|&l| svhn.layers[l].kind()).collect();
    assert_eq!(kinds.len(), 7);
    assert_eq!(kinds.iter().filter(|k| **k == LayerKind::Conv2d).count(), 4);

    let dir = tempfile::tempdir().unwrap();
    let cifar = fixtures::cifar10_like(0);
    save_model(&cifar, dir.path()).unwrap();
    assert_eq!(read_manifest(dir.path()).unwrap().parameter_count, 552_874);
    let svhn_dir = tempfile::tempdir().unwrap();
    save_model(&svhn, svhn_dir.path()).unwrap();
    assert_eq!(load_model(svhn_dir.path()).unwrap().parameterized_layers().len(), 7);
}

#[test]
fn cifar_plan_survivors() {
    let m = fixtures::cifar10_like(0);
    let plan = SparsityPlan::uniform(&m, 0.5).unwrap();
    assert_eq!(plan.len(), 7);
    assert_eq!(count_nonzero(&prune(&m, &plan).unwrap()), 276_437);
}

#[test]
fn count_nonzero_matches_recount() {
    let mut r = common::rng(1);
    let m = fixtures::toy_cnn(2);
    for _ in 0..20 {
        let mut plan = SparsityPlan::new();
        for l in m.parameterized_layers() {
            if r.gen_bool(0.7) {
                plan.set(l, r.gen_range(0.0..=1.0)).unwrap();
            }
        }
        let masked = prune(&m, &plan).unwrap();
        let eff = masked.effective_model();
        let recount: usize = eff
            .parameterized_layers()
            .iter()
            .map(|&l| eff.weight(l).unwrap().data().iter().filter(|v| **v != 0.0).count())
            .sum();
        // Fixture weights are never exactly zero, so survivors are exactly the nonzeros.
        assert_eq!(count_nonzero(&masked), recount);
    }
}

#[test]
fn sparsity_profile_matches_recount() {
    let mut r = common::rng(3);
    let m = fixtures::toy_cnn(4);
    for seed in 0..5 {
        let mut plan = SparsityPlan::new();
        for l in m.parameterized_layers() {
            plan.set(l, r.gen_range(0.0..0.95)).unwrap();
        }
        let masked = prune(&m, &plan).unwrap();
        let x = fixtures::random_input(&m.input_shape, seed);
        let profile = layer_sparsity_profile(&masked, &x).unwrap();
        let eff = masked.effective_model();
        // Capture each intermediate by running growing prefixes through the naive oracle.
        for p in &profile {
            let mut prefix = eff.clone();
            prefix.layers.truncate(p.layer + 1);
            let out = common::naive_forward(&prefix, &x);
            let zeros = out.iter().filter(|v| **v == 0.0).count();
            assert!((p.activation_sparsity - zeros as f64 / out.len() as f64).abs() < 1e-12);
            if let Some(ws) = p.weight_sparsity {
                let w = eff.weight(p.layer).unwrap();
                let wz = w.data().iter().filter(|v| **v == 0.0).count();
                assert!((ws - wz as f64 / w.len() as f64).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn density_init_quantiles() {
    let values: Vec<f64> = (1..=100).map(f64::from).collect();
    let c = init_centroids_density(&values, 2).unwrap();
    assert!((c[0] - common::quantile(&values, 0.25)).abs() < 1e-12);
    assert!((c[1] - common::quantile(&values, 0.75)).abs() < 1e-12);
    assert!((c[0] - 25.75).abs() < 1e-12 && (c[1] - 75.25).abs() < 1e-12);

    let mut r = common::rng(5);
    for _ in 0..50 {
        let n = r.gen_range(1..40);
        let mut v: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let k = r.gen_range(1..8);
        let got = init_centroids_density(&v, k).unwrap();
        v.sort_by(f64::total_cmp);
        for (j, g) in got.iter().enumerate() {
            let want = common::quantile(&v, (j as f64 + 0.5) / k as f64);
            assert!((g - want).abs() < 1e-12);
        }
    }
}

#[test]
fn density_init_equal_frequency_distinct() {
    for distinct in 1..=6usize {
        let base: Vec<f64> = (0..distinct).map(|i| i as f64 * 1.5 - 2.0).collect();
        let values: Vec<f64> = base.iter().flat_map(|&b| [b, b, b, b]).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let got = init_centroids_density(&values, distinct).unwrap();
        for (j, g) in got.iter().enumerate() {
            assert!((g - common::quantile(&sorted, (j as f64 + 0.5) / distinct as f64)).abs() < 1e-12);
            assert!((g - base[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn two_group_example_matches_exhaustive_kmeans() {
    let values = [1.0, 1.1, 5.0, 5.1];
    let (_, want) = common::kmeans_exhaustive(&values, 2);
    let book = cluster_values(&values, 2).unwrap();
    let got: Vec<f64> = book.centroids().to_vec();
    assert_eq!(got.len(), 2);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-6);
    }
    assert!((got[0] - 1.05).abs() < 1e-6 && (got[1] - 5.05).abs() < 1e-6);
}

#[test]
fn lloyd_never_beats_exhaustive_optimum_and_is_a_fixed_point() {
    let mut r = common::rng(6);
    for _ in 0..100 {
        let n = r.gen_range(2..12);
        let k = r.gen_range(1..=4).min(n);
        let values: Vec<f64> = (0..n).map(|_| (r.gen_range(-4.0..4.0f64) * 8.0).round() / 8.0).collect();
        let (opt, _) = common::kmeans_exhaustive(&values, k);
        let init = init_centroids_density(&values, k).unwrap();
        let out = lloyd_1d(&values, &init, 100).unwrap();
        let sse: f64 = values
            .iter()
            .zip(&out.assignments)
            .map(|(v, &a)| (v - out.centroids[a as usize]).powi(2))
            .sum();
        assert!(sse >= opt - 1e-9);
        // Every value sits at its nearest centroid.
        for (v, &a) in values.iter().zip(&out.assignments) {
            let d = (v - out.centroids[a as usize]).abs();
            assert!(out.centroids.iter().all(|c| (v - c).abs() >= d - 1e-12));
        }
    }
}

#[test]
fn cifar_sixteen_clusters() {
    let m = fixtures::cifar10_like(1);
    let masked = prune(&m, &SparsityPlan::uniform(&m, 0.5).unwrap()).unwrap();
    let (clustered, books) = cluster_weights(&masked, 16).unwrap();
    assert_eq!(books.dac_resolution().bits, 4);
    let eff = clustered.effective_model();
    for l in eff.parameterized_layers() {
        let mut distinct: Vec<f64> = eff.weight(l).unwrap().data().iter().copied().filter(|v| *v != 0.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert!(distinct.len() <= 16);
    }
    assert_eq!(required_dac_bits(16).bits, 4);
    assert_eq!(required_dac_bits(1).bits, 1);
}

#[test]
fn fc_compression_matches_dense_gemm() {
    let mut r = common::rng(7);
    for _ in 0..100 {
        let (out, inp) = (r.gen_range(1..30), r.gen_range(1..30));
        let w = common::sparse_values(&mut r, out * inp, 0.4);
        let a = common::sparse_values(&mut r, inp, 0.5);
        let g = compress_fc(&Tensor::new(vec![out, inp], w.clone()).unwrap(), &a).unwrap();
        assert!(g.dense().iter().all(|v| *v != 0.0));
        assert_eq!(g.output_dim(), out);
        assert!(common::rel_linf(&g.evaluate(), &common::naive_fc(&a, &w, out)) <= 1e-12);
    }
}

#[test]
fn unrolled_and_compressed_conv_match_naive_conv() {
    let mut r = common::rng(8);
    for _ in 0..100 {
        let (ic, oc, k) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let (h, w) = (r.gen_range(k..9), r.gen_range(k..9));
        let (stride, pad) = (r.gen_range(1..3), r.gen_range(0..2));
        let kern = common::sparse_values(&mut r, oc * ic * k * k, 0.5);
        let map = common::sparse_values(&mut r, ic * h * w, 0.3);
        let (want, shape) = common::naive_conv(&map, [ic, h, w], &kern, [oc, ic, k, k], stride, pad);
        let u = unroll_conv(
            &Tensor::new(vec![oc, ic, k, k], kern).unwrap(),
            &Tensor::new(vec![ic, h, w], map).unwrap(),
            stride,
            pad,
        )
        .unwrap();
        assert_eq!(u.output_map_shape(), shape);
        assert!(common::rel_linf(&u.evaluate(), &want) <= 1e-12);
        let compressed: Vec<f64> = compress_conv(&u).iter().flat_map(|g| g.evaluate()).collect();
        assert!(common::rel_linf(&compressed, &want) <= 1e-12);
    }
}

#[test]
fn chunks_reassemble() {
    let mut r = common::rng(9);
    for _ in 0..100 {
        let (out, inp) = (r.gen_range(1..6), r.gen_range(1..60));
        let w = common::sparse_values(&mut r, out * inp, 0.2);
        let a = common::sparse_values(&mut r, inp, 0.2);
        let g = compress_fc(&Tensor::new(vec![out, inp], w).unwrap(), &a).unwrap();
        let chunk = r.gen_range(1..20);
        let chunks = chunk_work(&g, chunk).unwrap();
        for row in 0..out {
            let mine: Vec<_> = chunks.iter().filter(|c| c.row == row).collect();
            let dense: Vec<f64> = mine.iter().flat_map(|c| c.dense[..chunk - c.padding].to_vec()).collect();
            let sparse: Vec<f64> = mine.iter().flat_map(|c| c.sparse[..chunk - c.padding].to_vec()).collect();
            assert_eq!(dense, g.dense());
            assert_eq!(sparse, g.row(row));
            assert!(mine.iter().all(|c| c.dense[chunk - c.padding..].iter().all(|v| *v == 0.0)));
        }
    }
}

#[test]
fn quantize_error_bound_on_grid() {
    let max_abs = 1.7;
    let bound = max_abs / 63.0;
    for i in -20_000..=20_000 {
        let v = i as f64 / 20_000.0 * max_abs;
        let q = quantize(v, 6, max_abs);
        assert!((q - v).abs() <= bound, "{v} -> {q}");
    }
}

#[test]
fn exact_pass_matches_scalar_loop() {
    let mut r = common::rng(10);
    let dev = DeviceParams::default();
    for _ in 0..200 {
        let n = r.gen_range(1..50);
        let d: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let s = common::sparse_values(&mut r, n, 0.3);
        let bn = r.gen_range(0.1..2.0);
        let mut want = 0.0;
        for i in 0..n {
            want += d[i] * s[i];
        }
        want *= bn;
        let kind = if n % 2 == 0 { UnitKind::Conv } else { UnitKind::Fc };
        let ranges = OperandRanges {
            dense_max: 3.0,
            sparse_max: 1.0,
        };
        let got = vdu_pass(&d, &s, bn, &QuantSpec::exact(), &dev, kind, ranges).unwrap();
        assert!((got.value - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn pass_energy_matches_per_lane_accounting() {
    let mut r = common::rng(11);
    let dev = DeviceParams::default();
    for _ in 0..100 {
        let bits = r.gen_range(1..=16);
        let q = QuantSpec {
            weight_bits: bits,
            ..QuantSpec::exact()
        };
        let kind = if r.gen_bool(0.5) { UnitKind::Conv } else { UnitKind::Fc };
        let n = r.gen_range(1..30);
        let d: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..1.0)).collect();
        let s = common::sparse_values(&mut r, n, 0.5);
        let res = Vdu::new(kind, &dev, &q).pass(&d, &s, 1.0).unwrap();

        let (dense_bits, sparse_bits) = match kind {
            UnitKind::Conv => (bits, 16),
            UnitKind::Fc => (16, bits),
        };
        let dac = |b: u32| if b <= 6 { (3e-3, 0.25e-9) } else { (40e-3, 0.33e-9) };
        let eo = 4e-6 * 1.0 * 20e-9;
        let lane = dac(dense_bits).0 * dac(dense_bits).1 + 1.3e-3 * 0.07e-9 + dac(sparse_bits).0 * dac(sparse_bits).1 + eo;
        let active = s.iter().filter(|v| **v != 0.0).count();
        let readout = 2.8e-3 * 5.8e-12 + 62e-3 * 14e-9;
        let want = if active == 0 {
            readout
        } else {
            active as f64 * lane + eo + readout
        };
        assert!((res.energy_j - want).abs() <= 1e-12 * want);
        assert_eq!(res.vcsels_gated, n - active);
    }
}

#[test]
fn doubling_conv_units_halves_pass_bound_latency() {
    let dev = DeviceParams::default();
    let q = QuantSpec::exact();
    let mut r = common::rng(12);
    for _ in 0..30 {
        let units = r.gen_range(1..20);
        let rows = r.gen_range(2 * units..10 * units);
        let w = vec![1.0; rows * 5];
        let g = compress_fc(&Tensor::new(vec![rows, 5], w).unwrap(), &[1.0; 5]).unwrap();
        let a = VduConfig::new(5, 50, units, 1);
        let b = VduConfig::new(5, 50, 2 * units, 1);
        let (ra, _) = schedule_layer(0, &[g.clone()], UnitKind::Conv, &a, &dev, &q).unwrap();
        let (rb, _) = schedule_layer(0, &[g], UnitKind::Conv, &b, &dev, &q).unwrap();
        // Oracle: waves = ceil(passes / units).
        let waves = |u: usize| rows.div_ceil(u) as f64;
        assert_eq!(ra.latency_s / rb.latency_s, waves(units) / waves(2 * units));
        if rows % (2 * units) == 0 {
            assert_eq!(ra.latency_s, 2.0 * rb.latency_s);
        }
    }
}

#[test]
fn sweep_arch_n_saturation() {
    let m = ModelBuilder::new("narrow", vec![1, 8, 8], 3)
        .conv(3, 2, 1, 0, false)
        .relu()
        .conv(4, 1, 1, 0, false)
        .relu()
        .fc(10, false)
        .build()
        .unwrap();
    let inputs = vec![fixtures::random_input(&m.input_shape, 0)];
    let configs = [VduConfig::new(5, 50, 50, 10), VduConfig::new(6, 50, 50, 10)];
    let ranked = sweep_arch(&Artifact::plain(m), &inputs, &configs, &SimSetup::default()).unwrap();
    assert_eq!(ranked.len(), 2);
    assert_eq!(ranked[0].report.total_latency_s, ranked[1].report.total_latency_s);
    // Equal FPS/W and EPB: the earlier config ranks first.
    assert_eq!(ranked[0].index, 0);
}

#[test]
fn explore_best_matches_independent_reevaluation() {
    let m = fixtures::toy_cnn(13);
    let eval = EvalSet::synthetic(&m, 2, 3);
    let grid = ExplorationGrid {
        sparsity: vec![0.0, 0.4, 0.8],
        clusters: vec![None, Some(8), Some(2)],
        layers: vec![LayerSubset::All],
        arch: vec![VduConfig::default()],
        objective: Objective::Epb,
    };
    let setup = SimSetup::default();
    let ex = explore(&m, &eval, &grid, &setup, 1).unwrap();
    assert_eq!(ex.ranked.len(), 9);
    let expected: Vec<usize> = eval.inputs.iter().map(|x| reference_forward(&m, x).unwrap().argmax()).collect();
    let mut best = (f64::INFINITY, usize::MAX);
    for p in grid.points() {
        let plan = p.layers.plan(&m, p.sparsity).unwrap();
        let a = compress(&m, &plan, p.clusters).unwrap();
        let s = SimSetup {
            arch: p.arch,
            quant: quant_for(&a, false),
            ..setup
        };
        let (report, _) = evaluate(&a, &eval, &expected, &s).unwrap();
        if report.metrics.epb < best.0 {
            best = (report.metrics.epb, p.index);
        }
    }
    assert_eq!(ex.ranked[0].point.index, best.1);
    assert_eq!(ex.ranked[0].metrics.epb, best.0);
}

#[test]
fn sparser_point_uses_no_more_energy() {
    let m = fixtures::toy_cnn(14);
    let x = fixtures::random_input(&m.input_shape, 0);
    let energy = |s: f64| {
        let a = compress(&m, &SparsityPlan::uniform(&m, s).unwrap(), None).unwrap();
        simulate(&a, &x, &SimSetup::default()).unwrap().report.total_energy_j
    };
    assert!(energy(0.5) <= energy(0.0));
    assert!(energy(0.8) <= energy(0.5));
}

#[test]
fn manifest_parameter_count_is_stable() {
    let m = fixtures::mnist_like(2);
    let dir = tempfile::tempdir().unwrap();
    save_model(&m, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(count_parameters(&back), fixtures::MNIST_PARAMETERS);
    assert_eq!(back, m);
}
