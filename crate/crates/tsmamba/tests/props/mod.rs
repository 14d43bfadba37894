//! Property suites shared by the `properties` test target and the
//! acceptance runner. Every property runs under a deterministic proptest
//! runner with no failure persistence, so a run is reproducible anywhere.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;

use tsmamba::bench;
use tsmamba::checkpoint::Checkpoint;
use tsmamba::config::RunConfig;
use tsmamba::dataset::{split_labels, train_count, SplitSpec};
use tsmamba_core::autoencoder::AeModel;
use tsmamba_core::classifier::{predictions, ClassifierConfig, ClassifierModel};
use tsmamba_core::metrics::{self, Ratio};
use tsmamba_core::ops;
use tsmamba_core::scan::{self, ScanAlgo, SsmParams};
use tsmamba_core::tsmamba::{encoder_param_count, Orientation, TsMambaBlock, TsMambaConfig};
use tsmamba_core::{seeded_rng, ParamStore, Tape, Tensor};

/// Cases for properties of pure functions.
pub const PURE_CASES: u32 = 1000;

pub struct Property {
    pub name: &'static str,
    pub cases: u32,
    pub run: fn(u32) -> Result<(), String>,
}

pub fn all() -> Vec<Property> {
    let p = |name, run| Property {
        name,
        cases: PURE_CASES,
        run,
    };
    vec![
        p("softmax_rows_are_distributions", softmax_rows_are_distributions),
        p("layernorm_rows_are_centred", layernorm_rows_are_centred),
        p("conv2d_matches_naive_loops", conv2d_matches_naive_loops),
        p("scan_parallel_equals_sequential", scan_parallel_equals_sequential),
        p("scan_is_causal", scan_is_causal),
        p("scan_is_linear_in_input", scan_is_linear_in_input),
        p("scan_output_is_bounded", scan_output_is_bounded),
        p("orientation_round_trip", orientation_round_trip),
        p("fresh_block_is_identity", fresh_block_is_identity),
        p("encoder_count_matches_closed_form", encoder_count_matches_closed_form),
        p("autoencoder_preserves_shape", autoencoder_preserves_shape),
        p("classifier_outputs_distributions", classifier_outputs_distributions),
        p("argmax_ignores_constant_shift", argmax_ignores_constant_shift),
        p("confusion_counts_are_consistent", confusion_counts_are_consistent),
        p("binary_collapse_keeps_positive_counts", binary_collapse_keeps_positive_counts),
        p("f1_lies_between_precision_and_recall", f1_lies_between_precision_and_recall),
        p("percent_is_truncated", percent_is_truncated),
        p("auc_is_antisymmetric", auc_is_antisymmetric),
        p("checkpoint_round_trip", checkpoint_round_trip),
        p("config_text_round_trip", config_text_round_trip),
        p("split_partitions_each_class", split_partitions_each_class),
        p("bench_inputs_are_seeded", bench_inputs_are_seeded),
    ]
}

/// Overrides every suite's case count when `PROPTEST_CASES` is set, so a
/// fuzzing job can run the same properties for longer.
pub fn cases_for(p: &Property) -> u32 {
    std::env::var("PROPTEST_CASES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(p.cases)
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn ok<T>(r: tsmamba_core::Result<T>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

fn tensor(shape: Vec<usize>, lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut seeded_rng(seed)).expect("shape")
}

// ---------------------------------------------------------------------------
// kernels

fn softmax_rows_are_distributions(cases: u32) -> Result<(), String> {
    check(cases, (1usize..6, 1usize..9, -50.0f64..50.0, any::<u64>()), |(r, c, scale, seed)| {
        let x = tensor(vec![r, c], -1.0, 1.0, seed).map(|v| v * scale);
        let y = ok(ops::softmax_lastaxis(&x))?;
        for row in y.data().chunks(c) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        Ok(())
    })
}

fn layernorm_rows_are_centred(cases: u32) -> Result<(), String> {
    check(cases, (1usize..6, 2usize..17, 0.1f64..100.0, any::<u64>()), |(r, c, scale, seed)| {
        let x = tensor(vec![r, c], -1.0, 1.0, seed).map(|v| v * scale + 3.0);
        let gamma = Tensor::full([c], 1.0).unwrap();
        let beta = Tensor::zeros([c]).unwrap();
        let y = ok(ops::layernorm(&x, &gamma, &beta, 1e-5))?;
        for row in y.data().chunks(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            prop_assert!(mean.abs() <= 1e-9, "row mean {mean}");
        }
        Ok(())
    })
}

fn naive_conv(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (b, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, k, _) = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(b * cout * oh * ow);
    for n in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                                    acc += w.at(&[co, ci, ky, kx]) * x.at(&[n, ci, y as usize, xx as usize]);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn conv2d_matches_naive_loops(cases: u32) -> Result<(), String> {
    let geometry = (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..3, 0usize..3, 1usize..9, 1usize..9);
    check(cases, (geometry, any::<u64>()), |((b, cin, cout, k, stride, pad, h, w), seed)| {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = tensor(vec![b, cin, h, w], -1.0, 1.0, seed);
        let wt = tensor(vec![cout, cin, k, k], -1.0, 1.0, seed ^ 1);
        let bias = tensor(vec![cout], -1.0, 1.0, seed ^ 2);
        let y = ok(ops::conv2d(&x, &wt, Some(&bias), stride, pad))?;
        prop_assert_eq!(y.data(), &naive_conv(&x, &wt, &bias, stride, pad)[..]);
        Ok(())
    })
}

fn scan_instance() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..65, 1usize..5, 1usize..5, any::<u64>())
}

fn instance(len: usize, d: usize, n: usize, seed: u64) -> (Tensor, SsmParams) {
    scan::random_instance(len, d, n, &mut seeded_rng(seed)).expect("instance")
}

fn scan_parallel_equals_sequential(cases: u32) -> Result<(), String> {
    check(cases, scan_instance(), |(len, d, n, seed)| {
        let (u, p) = instance(len, d, n, seed);
        let s = ok(scan::selective_scan_seq(&u, &p))?;
        let q = ok(scan::selective_scan_par(&u, &p))?;
        prop_assert!(ok(s.max_abs_diff(&q))? <= 1e-10);
        Ok(())
    })
}

fn scan_is_causal(cases: u32) -> Result<(), String> {
    check(cases, (scan_instance(), any::<prop::sample::Index>()), |((len, d, n, seed), at)| {
        let (u, p) = instance(len, d, n, seed);
        let t0 = at.index(len);
        let mut bumped = u.clone();
        for v in &mut bumped.data_mut()[t0 * d..] {
            *v += 1.0;
        }
        let a = ok(scan::selective_scan_seq(&u, &p))?;
        let b = ok(scan::selective_scan_seq(&bumped, &p))?;
        prop_assert_eq!(&a.data()[..t0 * d], &b.data()[..t0 * d]);
        Ok(())
    })
}

fn scan_is_linear_in_input(cases: u32) -> Result<(), String> {
    check(cases, (scan_instance(), -2.0f64..2.0, -2.0f64..2.0), |((len, d, n, seed), alpha, beta)| {
        let (u1, p) = instance(len, d, n, seed);
        let u2 = tensor(vec![len, d], -1.0, 1.0, seed ^ 7);
        let mix = ok(u1.zip_map(&u2, |a, b| alpha * a + beta * b))?;
        let y1 = ok(scan::selective_scan_seq(&u1, &p))?;
        let y2 = ok(scan::selective_scan_seq(&u2, &p))?;
        let ym = ok(scan::selective_scan_seq(&mix, &p))?;
        let expected = ok(y1.zip_map(&y2, |a, b| alpha * a + beta * b))?;
        prop_assert!(ok(ym.max_abs_diff(&expected))? <= 1e-9);
        Ok(())
    })
}

/// With decays in `(0,1)`, `|h_t| ≤ Σ_s Δ_s·|B_s|·|u_s|`, which bounds `y`.
fn scan_output_is_bounded(cases: u32) -> Result<(), String> {
    check(cases, scan_instance(), |(len, d, n, seed)| {
        let (u, p) = instance(len, d, n, seed);
        let y = ok(scan::selective_scan_par(&u, &p))?;
        let max_b = p.b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_c = p.c.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ch in 0..d {
            let mut drive = 0.0;
            for t in 0..len {
                drive += p.delta.at(&[t, ch]) * u.at(&[t, ch]).abs();
                let bound = n as f64 * max_b * max_c * drive + p.d_skip.data()[ch].abs() * u.at(&[t, ch]).abs();
                prop_assert!(y.at(&[t, ch]).abs() <= bound * (1.0 + 1e-12) + 1e-12);
            }
        }
        Ok(())
    })
}

fn orientation_round_trip(cases: u32) -> Result<(), String> {
    check(cases, (1usize..4, 1usize..9, 1usize..9, 0usize..3, any::<u64>()), |(c, h, w, o, seed)| {
        let orient = Orientation::ALL[o];
        let mut order = orient.order(h, w);
        let img = tensor(vec![c, h, w], -1.0, 1.0, seed);
        let seq = ok(orient.flatten(&img))?;
        prop_assert_eq!(ok(orient.unflatten(&seq, h, w))?, img);
        order.sort_unstable();
        prop_assert_eq!(order, (0..h * w).collect::<Vec<_>>());
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// models

fn fresh_block_is_identity(cases: u32) -> Result<(), String> {
    check(cases, (1usize..5, 1usize..4, 1usize..3, 1usize..4, 1usize..4, any::<u64>()), |(c, n, r, h, w, seed)| {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let block = TsMambaBlock::new(&mut store, "b", c, n, r, &mut rng);
        let x = tensor(vec![2 * h * w, c], -1.0, 1.0, seed ^ 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let dims = tsmamba_core::tsmamba::SpatialDims { batch: 2, height: h, width: w };
        let y = ok(block.forward(&mut tape, &bound, xv, dims, ScanAlgo::Sequential))?;
        prop_assert_eq!(tape.value(y), &x);
        Ok(())
    })
}

fn tiny_ae(layers: usize, base: usize, n: usize, side_log: u32, channels: usize) -> TsMambaConfig {
    TsMambaConfig {
        num_layers: layers,
        widths: (0..layers).map(|i| base + i).collect(),
        d_state: n,
        mlp_ratio: 1,
        image_height: 1 << side_log,
        image_width: 1 << side_log,
        in_channels: channels,
        scan: ScanAlgo::Sequential,
    }
}

fn encoder_count_matches_closed_form(cases: u32) -> Result<(), String> {
    check(cases, (1usize..5, 1usize..6, 1usize..5, 1usize..4, any::<u64>()), |(layers, base, n, ch, seed)| {
        let cfg = tiny_ae(layers, base, n, 5, ch);
        let model = ok(AeModel::new(&cfg, seed))?;
        let encoder: usize = model
            .params()
            .iter()
            .filter(|(name, _)| name.starts_with("enc."))
            .map(|(_, t)| t.numel())
            .sum();
        prop_assert_eq!(encoder, encoder_param_count(&cfg));
        Ok(())
    })
}

fn autoencoder_preserves_shape(cases: u32) -> Result<(), String> {
    check(cases, (1usize..4, 1usize..4, 1usize..3, 1usize..3, any::<u64>()), |(layers, base, ch, batch, seed)| {
        let side_log = layers as u32;
        let cfg = tiny_ae(layers, base, 2, side_log, ch);
        let model = ok(AeModel::new(&cfg, seed))?;
        let side = 1usize << side_log;
        let x = tensor(vec![batch, ch, side, side], 0.0, 1.0, seed ^ 5);
        let y = ok(model.ae_forward(&x))?;
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    })
}

fn classifier_outputs_distributions(cases: u32) -> Result<(), String> {
    check(cases, (2usize..6, 1usize..3, any::<u64>()), |(classes, batch, seed)| {
        let cfg = ClassifierConfig {
            in_channels: 1,
            image_height: 8,
            image_width: 8,
            num_classes: classes,
            stem_width: 3,
            stem_kernel: 3,
            stem_stride: 1,
            widths: vec![3, 4],
            blocks: vec![1, 1],
        };
        let mut model = ok(ClassifierModel::new(&cfg, seed))?;
        // Move the zero-initialised head so the logits are not all equal.
        let mut rng = seeded_rng(seed ^ 9);
        for t in model.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += rand::Rng::gen_range(&mut rng, -0.2..0.2);
            }
        }
        let x = tensor(vec![batch, 1, 8, 8], -1.0, 1.0, seed);
        let logits = ok(model.classify(&x))?;
        prop_assert_eq!(logits.shape(), &[batch, classes][..]);
        let probs = ok(ops::softmax_lastaxis(&logits))?;
        for row in probs.data().chunks(classes) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(ok(model.predict(&x))?, predictions(&logits));
        Ok(())
    })
}

fn argmax_ignores_constant_shift(cases: u32) -> Result<(), String> {
    let rows = prop::collection::vec(prop::collection::vec(-8i32..8, 1..7), 1..5);
    check(cases, (rows, -100i32..100), |(rows, shift)| {
        // Small integers make ties common and keep the shift exact.
        let width = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| (0..width).map(move |j| f64::from(r[j % r.len()]))).collect();
        let a = Tensor::new([rows.len(), width], data).unwrap();
        let b = a.map(|v| v + f64::from(shift));
        prop_assert_eq!(predictions(&a), predictions(&b));
        for (row, &k) in a.data().chunks(width).zip(&predictions(&a)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(row.iter().position(|&v| v == max), Some(k));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// metrics

fn labelled() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..7).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..200)))
}

fn matrix(c: usize, pairs: &[(usize, usize)]) -> metrics::ConfusionMatrix {
    let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    metrics::confusion(&truth, &pred, metrics::index_names(c)).unwrap()
}

fn confusion_counts_are_consistent(cases: u32) -> Result<(), String> {
    check(cases, labelled(), |(c, pairs)| {
        let cm = matrix(c, &pairs);
        let r = ok(metrics::kpis(&cm))?;
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        prop_assert!(cm.trace() <= cm.total());
        prop_assert_eq!(r.accuracy, Ratio { num: cm.trace(), den: cm.total() });
        prop_assert_eq!(r.classes.iter().map(|k| k.support).sum::<u64>(), cm.total());
        // Micro-averaged recall is accuracy.
        let tp: u64 = r.classes.iter().map(|k| k.recall.num).sum();
        prop_assert_eq!(tp, cm.trace());
        for k in 0..c {
            prop_assert_eq!(cm.true_positives(k) + cm.false_negatives(k), r.classes[k].support);
            prop_assert_eq!(
                cm.true_positives(k) + cm.false_positives(k) + cm.false_negatives(k) + cm.true_negatives(k),
                cm.total()
            );
        }
        Ok(())
    })
}

fn binary_collapse_keeps_positive_counts(cases: u32) -> Result<(), String> {
    check(cases, (labelled(), any::<prop::sample::Index>()), |((c, pairs), pick)| {
        let cm = matrix(c, &pairs);
        let positive = pick.index(c);
        let bin = ok(metrics::binary_collapse(&cm, positive))?;
        let p = usize::from(positive != 0);
        prop_assert_eq!(bin.total(), cm.total());
        prop_assert_eq!(bin.true_positives(p), cm.true_positives(positive));
        prop_assert_eq!(bin.false_negatives(p), cm.false_negatives(positive));
        prop_assert_eq!(bin.false_positives(p), cm.false_positives(positive));
        prop_assert_eq!(&bin.names()[p], &cm.names()[positive]);
        Ok(())
    })
}

fn f1_lies_between_precision_and_recall(cases: u32) -> Result<(), String> {
    check(cases, labelled(), |(c, pairs)| {
        let r = ok(metrics::kpis(&matrix(c, &pairs)))?;
        for k in &r.classes {
            let (p, rc, f) = (k.precision.value(), k.recall.value(), k.f1.value());
            prop_assert!(f >= p.min(rc) - 1e-12 && f <= p.max(rc) + 1e-12, "{p} {rc} {f}");
        }
        Ok(())
    })
}

fn percent_is_truncated(cases: u32) -> Result<(), String> {
    check(cases, (1u64..100_000).prop_flat_map(|den| (0..=den, Just(den))), |(num, den)| {
        let r = Ratio { num, den };
        let shown: f64 = r.percent_string().parse().unwrap();
        let exact = 100.0 * num as f64 / den as f64;
        prop_assert!(shown <= exact + 1e-9 && exact - shown < 0.1 + 1e-9, "{num}/{den} shown {shown}");
        prop_assert_eq!(r.percent(), r.permille() / 10);
        Ok(())
    })
}

fn auc_is_antisymmetric(cases: u32) -> Result<(), String> {
    let scores = || prop::collection::vec(-5i32..5, 1..40);
    check(cases, (scores(), scores()), |(neg, pos)| {
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let a = ok(metrics::auc(&neg, &pos))?;
        let b = ok(metrics::auc(&pos, &neg))?;
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
        let lifted: Vec<f64> = pos.iter().map(|v| v + 100.0).collect();
        prop_assert_eq!(ok(metrics::auc(&neg, &lifted))?, 1.0);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// files and data plumbing

fn checkpoint_round_trip(cases: u32) -> Result<(), String> {
    let meta = prop::collection::vec(("[a-z_]{1,8}", "\\PC{0,16}"), 0..5);
    let shapes = prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 0..5);
    check(cases, (meta, shapes, any::<u64>()), |(meta, shapes, seed)| {
        let mut ckpt = Checkpoint::new();
        for (k, v) in &meta {
            ckpt.set_meta(k, v);
        }
        let mut rng = seeded_rng(seed);
        for (i, shape) in shapes.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let bits: Vec<f64> = (0..n).map(|_| f64::from_bits(rand::Rng::gen(&mut rng))).collect();
            ckpt.push_tensor(format!("t{i}"), Tensor::new(shape, bits).unwrap());
        }
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back.metadata, &ckpt.metadata);
        Ok(())
    })
}

fn config_text_round_trip(cases: u32) -> Result<(), String> {
    let knobs = (1usize..200, 1usize..200, 1e-7f64..1.0, 1usize..64, any::<u64>(), 0.05f64..0.95);
    check(cases, (any::<bool>(), knobs), |(paper, (ea, ec, lr, batch, seed, frac))| {
        let mut cfg = if paper { RunConfig::paper() } else { RunConfig::desk() };
        cfg.epochs_ae = ea;
        cfg.epochs_clf = ec;
        cfg.lr = lr;
        cfg.batch = batch;
        cfg.seed = seed;
        cfg.train_fraction = frac;
        let back = RunConfig::parse(&cfg.to_text()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, cfg);
        Ok(())
    })
}

fn split_partitions_each_class(cases: u32) -> Result<(), String> {
    let data = (1usize..6).prop_flat_map(|c| {
        (
            Just(c),
            prop::collection::vec(2usize..30, c),
            0.05f64..0.95,
            any::<u64>(),
        )
    });
    check(cases, data, |(c, sizes, frac, seed)| {
        let mut labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        // Interleave classes so indices are not grouped.
        labels.shuffle(&mut seeded_rng(seed ^ 11));
        let spec = SplitSpec { train_fraction: frac, seed };
        let s = split_labels(&labels, c, spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (k, &n) in sizes.iter().enumerate() {
            prop_assert_eq!(s.train_of_class(&labels, k).len(), train_count(n, frac));
            prop_assert!(!s.val_of_class(&labels, k).is_empty());
        }
        prop_assert_eq!(split_labels(&labels, c, spec).unwrap(), s);
        Ok(())
    })
}

fn bench_inputs_are_seeded(cases: u32) -> Result<(), String> {
    check(cases, (1usize..64, 1usize..5, any::<u64>()), |(n, d, seed)| {
        let a = bench::scan_input(n, d, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = bench::scan_input(n, d, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(a, b);
        let x = bench::attention_input(n, d, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(x, bench::attention_input(n, d, seed).unwrap());
        Ok(())
    })
}

