use tsmamba_core::autoencoder::AeModel;
use tsmamba_core::classifier::{ClassifierConfig, ClassifierModel};
use tsmamba_core::params::{self, ParamStore};
use tsmamba_core::scan::ScanAlgo;
use tsmamba_core::tsmamba::{self, SpatialDims, TsMambaBlock, TsMambaConfig};
use tsmamba_core::{seeded_rng, Tape, Tensor};

fn ae_config(size: usize, scan: ScanAlgo) -> TsMambaConfig {
    TsMambaConfig {
        widths: vec![4, 6, 8, 8],
        d_state: 3,
        image_height: size,
        image_width: size,
        scan,
        ..TsMambaConfig::default()
    }
}

#[test]
fn fresh_block_is_exactly_identity() {
    for (c, h, w) in [(1, 1, 1), (4, 3, 5), (8, 4, 4)] {
        let mut rng = seeded_rng(c as u64);
        let mut store = ParamStore::new();
        let block = TsMambaBlock::new(&mut store, "b", c, 4, 2, &mut rng);
        let x = Tensor::uniform([2 * h * w, c], -3.0, 3.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let dims = SpatialDims { batch: 2, height: h, width: w };
        let y = block.forward(&mut tape, &bound, xv, dims, ScanAlgo::Sequential).unwrap();
        assert_eq!(tape.value(y), &x);
    }
}

#[test]
fn encoder_count_matches_closed_form_layer_by_layer() {
    let config = ae_config(32, ScanAlgo::Sequential);
    let model = AeModel::new(&config, 0).unwrap();
    let stages = model.params().breakdown(2);
    for i in 0..config.num_layers {
        let c = config.widths[i];
        let conv = params::conv_param_count(c, 3, config.stage_input(i), true);
        let block = tsmamba::block_param_count(c, config.d_state, config.mlp_ratio);
        let got = stages.iter().find(|(n, _)| n == &format!("enc.{i}")).unwrap().1;
        assert_eq!(got, conv + block, "stage {i}");
    }
    let enc: usize = stages.iter().filter(|(n, _)| n.starts_with("enc.")).map(|e| e.1).sum();
    assert_eq!(enc, tsmamba::encoder_param_count(&config));
}

#[test]
fn autoencoder_is_batch_independent_and_deterministic() {
    for scan in [ScanAlgo::Sequential, ScanAlgo::Parallel] {
        let model = AeModel::new(&ae_config(16, scan), 3).unwrap();
        let mut rng = seeded_rng(4);
        let a = Tensor::uniform([1, 1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let b = Tensor::uniform([1, 1, 16, 16], 0.0, 1.0, &mut rng).unwrap();
        let both = Tensor::stack(&[a.index0(0).unwrap(), b.index0(0).unwrap()]).unwrap();
        let joint = model.ae_forward(&both).unwrap();
        let ya = model.ae_forward(&a).unwrap();
        let yb = model.ae_forward(&b).unwrap();
        assert_eq!(joint.index0(0).unwrap().data(), ya.data());
        assert_eq!(joint.index0(1).unwrap().data(), yb.data());
        let again = AeModel::new(&ae_config(16, scan), 3).unwrap().ae_forward(&both).unwrap();
        assert_eq!(again, joint);
    }
}

#[test]
fn scan_algorithms_agree_through_the_autoencoder() {
    let seq = AeModel::new(&ae_config(16, ScanAlgo::Sequential), 8).unwrap();
    let par = AeModel::new(&ae_config(16, ScanAlgo::Parallel), 8).unwrap();
    let x = Tensor::uniform([2, 1, 16, 16], 0.0, 1.0, &mut seeded_rng(1)).unwrap();
    let d = seq.ae_forward(&x).unwrap().max_abs_diff(&par.ae_forward(&x).unwrap()).unwrap();
    assert!(d <= 1e-12, "{d:e}");
}

#[test]
fn autoencoder_preserves_shape_across_configs() {
    for (size, layers, channels) in [(16, 4, 1), (32, 4, 3), (8, 3, 1), (64, 2, 2)] {
        let config = TsMambaConfig {
            num_layers: layers,
            widths: (0..layers).map(|i| 2 + i).collect(),
            d_state: 2,
            in_channels: channels,
            image_height: size,
            image_width: size,
            ..TsMambaConfig::default()
        };
        let model = AeModel::new(&config, 0).unwrap();
        let x = Tensor::uniform([1, channels, size, size], 0.0, 1.0, &mut seeded_rng(0)).unwrap();
        assert_eq!(model.ae_forward(&x).unwrap().shape(), x.shape());
    }
}

#[test]
fn classifier_batch_independence_and_tie_breaking() {
    let config = ClassifierConfig::desk(1, 32, 32, 2);
    let model = ClassifierModel::new(&config, 1).unwrap();
    let x = Tensor::uniform([3, 1, 32, 32], 0.0, 1.0, &mut seeded_rng(2)).unwrap();
    let logits = model.classify(&x).unwrap();
    assert_eq!(logits.shape(), [3, 2]);
    // Fresh heads are zero, so every logit ties and class 0 wins.
    assert_eq!(model.predict(&x).unwrap(), vec![0, 0, 0]);
    let single = model.classify(&Tensor::stack(&[x.index0(1).unwrap()]).unwrap()).unwrap();
    assert_eq!(single.data(), &logits.data()[2..4]);
}

#[test]
fn resnet18_layout_builds() {
    let config = ClassifierConfig::resnet18(1, 32, 32, 5);
    let model = ClassifierModel::new(&config, 0).unwrap();
    // Stem 3,200; stages 147,712 + 524,928 + 2,098,432 + 8,391,168.
    let trunk: usize = model.params().iter().filter(|(n, _)| !n.starts_with("head")).map(|(_, t)| t.numel()).sum();
    assert_eq!(model.params().count() - trunk, 512 * 5 + 5);
    assert_eq!(trunk, 11_165_440);
}
