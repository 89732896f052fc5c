use proptest::prelude::*;

use ggan_core::data::{
    build_m1_matrix, load_csv, write_csv, CsvOptions, Provenance, SyntheticModel, Dataset, BAND,
    M4_LOG_SHIFT,
};
use ggan_core::harness::{
    run_experiment, select_tau1, sweep_svg, DatasetSpec, Evaluator, ExperimentConfig, SweepRow,
    Architecture,
};
use ggan_core::metrics::{estimated_dim, mmd_squared, KernelMix};
use ggan_core::nets::{init_generator, InitSpec};
use ggan_core::numcore::{Affine, DenseMatrix, DenseVector};
use ggan_core::penalties::{
    depth_penalty, group_row_penalty, schedule_step, sparsity_penalty, truncate_params,
    truncate_rows, PenaltyConfig, ScheduleState,
};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

fn square_layers(width: usize, hidden: usize) -> impl Strategy<Value = Vec<Affine>> {
    let layer = (matrix(width, width), prop::collection::vec(-2.0f64..2.0, width))
        .prop_map(|(w, b)| Affine::new(w, DenseVector::new(b).unwrap()).unwrap());
    prop::collection::vec(layer, hidden + 2)
}

fn scaled(layers: &[Affine], c: f64) -> Vec<Affine> {
    layers
        .iter()
        .map(|l| Affine {
            weight: l.weight.map(|v| v * c),
            bias: DenseVector::new(l.bias.as_slice().iter().map(|v| v * c).collect()).unwrap(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mmd_is_symmetric_and_zero_on_itself(a in matrix(7, 3), b in matrix(5, 3)) {
        let k = KernelMix::default();
        let ab = mmd_squared(&a, &b, &k).unwrap();
        let ba = mmd_squared(&b, &a, &k).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(mmd_squared(&a, &a, &k).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn group_penalty_is_absolutely_homogeneous(b in matrix(6, 6), c in -4.0f64..4.0) {
        let m = group_row_penalty(&b);
        prop_assert!(m >= 0.0);
        let mc = group_row_penalty(&b.map(|v| v * c));
        prop_assert!((mc - c.abs() * m).abs() <= 1e-12 * (1.0 + m));
    }

    #[test]
    fn sparsity_penalty_is_absolutely_homogeneous(layers in square_layers(4, 2), c in -4.0f64..4.0) {
        let q = sparsity_penalty(&layers);
        prop_assert!(q >= 0.0);
        let qc = sparsity_penalty(&scaled(&layers, c));
        prop_assert!((qc - c.abs() * q).abs() <= 1e-12 * (1.0 + q));
    }

    #[test]
    fn depth_penalty_only_sees_hidden_layers(
        layers in square_layers(4, 2),
    ) {
        prop_assert!(depth_penalty(&layers).unwrap() >= 0.0);
        // Moving only the outer layers leaves P unchanged; collapsing the hidden ones zeroes it.
        let mut collapsed = layers.clone();
        let hidden = collapsed.len() - 1;
        for l in &mut collapsed[1..hidden] {
            l.weight = DenseMatrix::identity(4);
            l.bias = DenseVector::zeros(4);
        }
        prop_assert_eq!(depth_penalty(&collapsed).unwrap(), 0.0);
        let mut outer = layers.clone();
        outer[0].weight = outer[0].weight.map(|v| v * 7.0);
        outer[hidden].bias = DenseVector::filled(4, 9.0);
        prop_assert_eq!(depth_penalty(&outer).unwrap(), depth_penalty(&layers).unwrap());
    }

    #[test]
    fn row_truncation_is_idempotent_with_norm_gap(b in matrix(8, 5), tau in 0.0f64..6.0) {
        let t = truncate_rows(&b, tau);
        prop_assert_eq!(truncate_rows(&t, tau), t.clone());
        for (i, n) in b.row_norms().into_iter().enumerate() {
            if n <= tau {
                prop_assert!(t.row(i).iter().all(|v| *v == 0.0));
            } else {
                prop_assert_eq!(t.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn param_truncation_is_idempotent(layers in square_layers(3, 1), tau in 0.0f64..2.0) {
        let t = truncate_params(&layers, tau);
        prop_assert_eq!(truncate_params(&t, tau), t.clone());
        for (orig, cut) in layers.iter().zip(&t) {
            for (o, c) in orig.weight.as_slice().iter().zip(cut.weight.as_slice()) {
                let kept = if o.abs() <= tau { *c == 0.0 } else { c == o };
                prop_assert!(kept);
            }
        }
    }

    #[test]
    fn estimated_dim_is_monotone_in_tau(b in matrix(10, 4), t1 in 0.0f64..5.0, t2 in 0.0f64..5.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(estimated_dim(&truncate_rows(&b, hi)) <= estimated_dim(&truncate_rows(&b, lo)));
    }

    #[test]
    fn schedule_matches_closed_form(
        lambda0 in 1e-6f64..1.0,
        interval in 1usize..60,
        total in 1usize..800,
        frac in 0.0f64..1.0,
    ) {
        let s = ScheduleState::new(1.1, 0.9, interval, total).unwrap();
        let t_end = ((total - 1) as f64 * frac) as usize;
        let mut cfg = PenaltyConfig { lambda1: lambda0, lambda2: 2.0 * lambda0, lambda3: 0.5 * lambda0, ..PenaltyConfig::default() };
        for t in 0..=t_end {
            cfg = schedule_step(&cfg, &s.at(t));
        }
        let boundaries = (0..=t_end / interval).map(|k| k * interval);
        let expansions = boundaries.clone().filter(|&t| 2 * t < total).count() as i32;
        let shrinkages = boundaries.filter(|&t| 2 * t >= total).count() as i32;
        let factor = 1.1f64.powi(expansions) * 0.9f64.powi(shrinkages);
        prop_assert!((cfg.lambda1 - lambda0 * factor).abs() <= 1e-12 * lambda0 * factor);
        prop_assert!((cfg.lambda2 - 2.0 * lambda0 * factor).abs() <= 1e-12 * lambda0 * factor);
        prop_assert!((cfg.lambda3 - 0.5 * lambda0 * factor).abs() <= 1e-12 * lambda0 * factor);
    }

    #[test]
    fn csv_round_trip_is_exact(m in matrix(6, 4), header in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv(&path, &m, header).unwrap();
        let back = load_csv(&path, CsvOptions { has_header: header, min_max: false }).unwrap();
        prop_assert_eq!(back.samples, m);
    }

    #[test]
    fn m3_m4_follow_coordinate_oracles(z in matrix(4, 10)) {
        let m3 = SyntheticModel::M3.transform(&z).unwrap();
        let m4 = SyntheticModel::M4.transform(&z).unwrap();
        for r in 0..z.rows() {
            for i in 0..100 {
                let y = BAND[i % 10] * z.get(r, i / 10);
                let (e3, e4) = match i {
                    0..=19 => (y * y / 4.0, y.abs().sqrt() - 0.1),
                    20..=49 => (y, y),
                    50..=69 => (y.exp(), (y.abs() + M4_LOG_SHIFT).ln() + 0.5),
                    _ => ((20.0 * y).sin(), (20.0 * y).cos()),
                };
                prop_assert!((m3.get(r, i) - e3).abs() <= 1e-12 * (1.0 + e3.abs()));
                prop_assert!((m4.get(r, i) - e4).abs() <= 1e-12 * (1.0 + e4.abs()));
            }
        }
    }
}

#[test]
fn m1_population_covariance_is_w_wt() {
    let w = build_m1_matrix();
    let cov = w.matmul(&w.transpose()).unwrap();
    for i in 0..100 {
        for j in 0..100 {
            let expected = if i / 10 == j / 10 { BAND[i % 10] * BAND[j % 10] } else { 0.0 };
            assert_eq!(cov.get(i, j), expected, "({i}, {j})");
        }
    }
}

#[test]
fn select_tau1_separates_bimodal_rows() {
    let mut g = init_generator(12, 16, 2, 6, &InitSpec { weight_std: 0.4, bias_value: 0.05, seed: 4 }).unwrap();
    for i in 0..12 {
        let scale = if i < 4 { 1.0 } else { 1e-5 };
        for v in g.input_map.row_mut(i) {
            *v *= scale;
        }
    }
    let big = g.input_map.row_norms()[..4].iter().cloned().fold(f64::INFINITY, f64::min);
    let small = g.input_map.row_norms()[4..].iter().cloned().fold(0.0, f64::max);
    let noise = ggan_core::data::gaussian_matrix(&mut ggan_core::data::stream_rng(8, 0), 600, 12);
    let eval = Dataset::new(g.forward_batch(&noise).unwrap(), Provenance::Generated("self".into())).unwrap();
    let ev = Evaluator::new(&eval, KernelMix::default(), 2).unwrap();
    let tau = select_tau1(&g, &ev, 0.1).unwrap();
    assert_eq!(tau, small);
    assert!(tau < big);
    assert_eq!(estimated_dim(&truncate_rows(&g.input_map, tau)), 4);
}

fn parse_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn aggregate_is_recomputable_from_run_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::Synthetic(SyntheticModel::M2),
        n_train: 200,
        n_eval: 100,
        input_dim: 6,
        generator: Architecture { depth: 2, width: 12 },
        discriminator: Architecture { depth: 2, width: 12 },
        replications: 3,
        out_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.train.updates = 8;
    cfg.train.batch_size = 32;
    cfg.train.critic_steps = 2;
    cfg.train.interval = 2;
    run_experiment(&cfg, true).unwrap();

    let runs = parse_rows(&std::fs::read_to_string(dir.path().join("runs.csv")).unwrap());
    let agg = parse_rows(&std::fs::read_to_string(dir.path().join("results.csv")).unwrap());
    assert_eq!(runs.len(), 3);
    assert_eq!(agg.len(), 1);
    let col = |j: usize| runs.iter().map(|r| r[j].parse::<f64>().unwrap()).collect::<Vec<_>>();
    let stats = |v: Vec<f64>| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (mean, sd)
    };
    // runs: method, replicate, seed, mmd_x1e4, dim, prop0_pct, ...
    for (run_col, agg_col) in [(3, 1), (4, 3), (5, 5)] {
        let (mean, sd) = stats(col(run_col));
        let m: f64 = agg[0][agg_col].parse().unwrap();
        let s: f64 = agg[0][agg_col + 1].parse().unwrap();
        assert!((mean - m).abs() <= 1e-12 * (1.0 + m.abs()), "mean of column {run_col}");
        assert!((sd - s).abs() <= 1e-12 * (1.0 + s.abs()), "sd of column {run_col}");
    }
}

#[test]
fn sweep_svg_is_well_formed() {
    let rows: Vec<SweepRow> = [(1, 2, 30, 0.9), (10, 4, 90, 0.2), (50, 6, 150, 0.4)]
        .into_iter()
        .map(|(d, depth, width, m)| SweepRow { d, depth, width, mmd_mean: m, mmd_sd: 0.05, runs: vec![m; 3] })
        .collect();
    let svg = sweep_svg(&rows);
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches('<').count(), svg.matches('>').count());
    assert!(svg.contains("10-4x90"));
}
