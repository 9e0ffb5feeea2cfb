use std::fs;
use std::path::Path;

use adsm_stereo::evaluation::make_random_dot_stereogram;
use adsm_stereo::imaging::{save_gray, save_kitti_disparity};
use adsm_stereo::network::{load_weights, save_weights};
use adsm_stereo::pipeline::{checkpoint_path, run_training, TrainingJob};
use adsm_stereo::training::TrainerConfig;
use adsm_stereo::Error;

fn write_pairs(dir: &Path, count: usize) -> std::path::PathBuf {
    let mut manifest = String::new();
    for i in 0..count {
        let (w, h) = (240, 10);
        let s = make_random_dot_stereogram(w, h, &vec![2 + i as u32; w * h], i as u64).unwrap();
        let names = [format!("l{i}.png"), format!("r{i}.png"), format!("d{i}.png")];
        save_gray(dir.join(&names[0]), &s.left).unwrap();
        save_gray(dir.join(&names[1]), &s.right).unwrap();
        save_kitti_disparity(dir.join(&names[2]), &s.ground_truth).unwrap();
        manifest.push_str(&names.join(" "));
        manifest.push('\n');
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).unwrap();
    path
}

fn job(manifest: &Path, out: &Path) -> TrainingJob {
    TrainingJob {
        channels: 3,
        trainer: TrainerConfig {
            batch_size: 6,
            iterations: 4,
            seed: 21,
            ..TrainerConfig::default()
        },
        checkpoint_every: Some(2),
        loss_csv: Some(out.with_extension("csv")),
        validation_samples: 20,
        ..TrainingJob::new(manifest, "1Conv(2)&1Conv(2)", out)
    }
}

#[test]
fn fixed_seed_gives_byte_identical_weights() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_pairs(dir.path(), 4);
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    let sa = run_training(&job(&manifest, &a)).unwrap();
    run_training(&job(&manifest, &b)).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!((sa.train_pairs, sa.validation_pairs), (3, 1));
    assert_eq!(sa.validation.unwrap().samples, 20);
    let c = dir.path().join("c.bin");
    save_weights(&c, &sa.extractor).unwrap();
    assert_eq!(fs::read(&c).unwrap(), fs::read(&a).unwrap());
    assert_eq!(load_weights(&a).unwrap().patch_size(), sa.extractor.patch_size());

    let csv = fs::read_to_string(a.with_extension("csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,loss");
    assert_eq!(lines.len(), 5);
    assert!(checkpoint_path(&a, 2).is_file());
    assert!(!checkpoint_path(&a, 4).exists());
}

#[test]
fn empty_manifest_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    fs::write(&manifest, "\n# nothing here\n").unwrap();
    let out = dir.path().join("w.bin");
    let err = run_training(&job(&manifest, &out)).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_image_is_reported_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_pairs(dir.path(), 2);
    fs::remove_file(dir.path().join("r1.png")).unwrap();
    let out = dir.path().join("w.bin");
    let err = run_training(&job(&manifest, &out)).unwrap_err();
    assert!(err.to_string().contains("r1.png"), "{err}");
    assert!(!out.exists());
}
