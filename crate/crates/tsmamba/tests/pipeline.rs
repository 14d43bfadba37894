use std::fs;
use std::path::Path;

use tsmamba::config::RunConfig;
use tsmamba::dataset::{self, Dataset, SplitSpec};
use tsmamba::{artifacts, synth, train};

fn tiny_config(epochs_ae: usize, epochs_clf: usize) -> RunConfig {
    let text = format!(
        "image_size = 16\nwidths = 4,4,4,4\nd_state = 2\nbatch = 4\nlr_clf = 0.01\nepochs_ae = {epochs_ae}\nepochs_clf = {epochs_clf}\n"
    );
    RunConfig::parse(&text).unwrap()
}

fn tiny_data(root: &Path, per_class: usize) -> Dataset {
    synth::gen_synthetic(root, 1, per_class, 2, 16).unwrap();
    dataset::load_dataset(root, 16, 1).unwrap()
}

#[test]
fn phase_two_leaves_the_autoencoder_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 6);
    let cfg = tiny_config(2, 3);
    let split = dataset::split(&ds, SplitSpec { train_fraction: 0.7, seed: 0 }).unwrap();
    let p1 = train::train_phase1(&cfg, &ds, &split).unwrap();
    assert_eq!(p1.loss.len(), 2);
    assert_eq!(p1.loss.val.len(), 2);
    let before = p1.model.params().clone();
    let p2 = train::train_phase2(&cfg, &p1.model, &ds, &split).unwrap();
    assert_eq!(p1.model.params().tensors(), before.tensors());
    assert_eq!((p2.loss.len(), p2.accuracy.len()), (3, 3));
    assert!(p2.accuracy.train.iter().all(|a| (0.0..=1.0).contains(a)));
    let csv = p2.loss.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,train,val\n1,"));
}

#[test]
fn separable_residuals_give_a_diagonal_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 8);
    let cfg = tiny_config(15, 40);
    let split = dataset::split(&ds, SplitSpec { train_fraction: 0.7, seed: 0 }).unwrap();
    let p1 = train::train_phase1(&cfg, &ds, &split).unwrap();
    let p2 = train::train_phase2(&cfg, &p1.model, &ds, &split).unwrap();
    let ev = train::evaluate(&p1.model, &p2.model, &ds, &split.train, &cfg.target_class).unwrap();
    let cm = &ev.confusion;
    assert_eq!(cm.trace(), cm.total(), "{}", ev.to_text());
    assert!(ev.binary.is_none());
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 3);
    let cfg = tiny_config(1, 1);
    let split = dataset::split(&ds, SplitSpec::default()).unwrap();
    let p1 = train::train_phase1(&cfg, &ds, &split).unwrap();
    let p2 = train::train_phase2(&cfg, &p1.model, &ds, &split).unwrap();
    assert!(train::evaluate(&p1.model, &p2.model, &ds, &[], "target").is_err());
}

#[test]
fn missing_target_class_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 3);
    let mut cfg = tiny_config(1, 1);
    cfg.target_class = "drones".into();
    let split = dataset::split(&ds, SplitSpec::default()).unwrap();
    let err = train::train_phase1(&cfg, &ds, &split).err().unwrap();
    assert!(err.to_string().contains("drones"), "{err}");
}

#[test]
fn residuals_are_absolute_differences() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 3);
    let cfg = tiny_config(1, 1);
    let split = dataset::split(&ds, SplitSpec::default()).unwrap();
    let ae = train::train_phase1(&cfg, &ds, &split).unwrap().model;
    let idx = [0, 4];
    let r = train::residuals(&ae, &ds, &idx).unwrap();
    let recon = ae.ae_forward(&ds.batch(&idx).unwrap()).unwrap();
    let per = 16 * 16;
    for (k, &i) in idx.iter().enumerate() {
        for p in 0..per {
            let expected = (ds.images[i][p] - recon.data()[k * per + p]).abs();
            assert_eq!(r[k][p], expected);
        }
    }
}

#[test]
fn fixture_pixels_are_scaled_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let class = dir.path().join("only");
    fs::create_dir_all(&class).unwrap();
    let pixels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
    for name in ["a.png", "b.png"] {
        fs::write(class.join(name), synth::encode_png(4, pixels.clone()).unwrap()).unwrap();
    }
    fs::write(class.join("notes.txt"), "ignored").unwrap();
    let ds = dataset::load_dataset(dir.path(), 4, 1).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.class_names, vec!["only".to_string()]);
    for (v, &p) in ds.images[0].iter().zip(&pixels) {
        assert_eq!(*v, f64::from(p) / 255.0);
    }
    assert_eq!(ds.batch(&[1, 0]).unwrap().shape(), &[2, 1, 4, 4]);
}

#[test]
fn unreadable_image_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let class = dir.path().join("c");
    fs::create_dir_all(&class).unwrap();
    fs::write(class.join("broken.png"), b"not a png").unwrap();
    let err = dataset::load_dataset(dir.path(), 8, 1).err().unwrap();
    assert!(err.to_string().contains("broken.png"), "{err}");
}

#[test]
fn checkpoints_rebuild_identical_models() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path(), 3);
    let cfg = tiny_config(1, 1);
    let split = dataset::split(&ds, SplitSpec::default()).unwrap();
    let p1 = train::train_phase1(&cfg, &ds, &split).unwrap();
    let info = artifacts::TrainInfo {
        epoch: 1,
        loss: p1.loss.train[0],
        class_names: ds.class_names.clone(),
    };
    let ckpt = artifacts::ae_checkpoint(&p1.model, &cfg, &info);
    let path = dir.path().join("ae.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = tsmamba::checkpoint::Checkpoint::load(&path).unwrap();
    let (ae, cfg_back) = artifacts::load_ae(&loaded).unwrap();
    assert_eq!(cfg_back, cfg);
    let x = ds.batch(&[0, 1]).unwrap();
    assert_eq!(ae.ae_forward(&x).unwrap(), p1.model.ae_forward(&x).unwrap());
    assert_eq!(artifacts::ae_checkpoint(&ae, &cfg_back, &info).to_bytes(), fs::read(&path).unwrap());
}
