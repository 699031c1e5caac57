use std::collections::HashSet;
use std::fs;

use semisupcon::data::{load_csv, load_idx, split_semi, write_idx, Dataset};
use semisupcon::error::SscError;
use semisupcon::model::{
    init_params, load_checkpoint, load_checkpoint_matching, save_checkpoint, ModelDims,
};
use semisupcon::numerics::{Matrix, SeededRng};

#[test]
fn idx_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    let pixels: Vec<f64> = (0..3 * 4).map(|v| f64::from(v * 20) / 255.0).collect();
    let features = Matrix::new(3, 4, pixels.clone()).unwrap();
    write_idx(&img, &lab, &features, &[2, 0, 1], 2, 2).unwrap();
    let d = load_idx(&img, &lab).unwrap();
    assert_eq!(d.features.data(), pixels.as_slice());
    assert_eq!(d.labels, vec![2, 0, 1]);
    assert_eq!(d.k, 3);

    // label file claiming a different count
    let other = dir.path().join("other.idx");
    write_idx(
        &other,
        &dir.path().join("short.idx"),
        &features.slice_rows(0, 2),
        &[0, 1],
        2,
        2,
    )
    .unwrap();
    assert!(matches!(
        load_idx(&img, &dir.path().join("short.idx")),
        Err(SscError::CountMismatch(_))
    ));
    let mut bytes = fs::read(&img).unwrap();
    bytes[3] = 0x01;
    fs::write(&img, &bytes).unwrap();
    assert!(matches!(
        load_idx(&img, &lab),
        Err(SscError::BadMagic { .. })
    ));
}

#[test]
fn csv_uses_the_last_column_as_label() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "x0,x1,label\n0.5,1.0,1\n-2,3e-1,0\n").unwrap();
    let d = load_csv(&path, true).unwrap();
    assert_eq!(d.features.data(), &[0.5, 1.0, -2.0, 0.3]);
    assert_eq!(d.labels, vec![1, 0]);
    fs::write(&path, "0.5,1.0,x\n").unwrap();
    assert!(matches!(
        load_csv(&path, false),
        Err(SscError::InvalidDataset(_))
    ));
}

#[test]
fn split_partitions_are_disjoint_and_exhaustive() {
    let mut rng = SeededRng::new(5);
    let x = Matrix::random_normal(60, 3, 1.0, &mut rng);
    let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let d = Dataset::new(x, y, 3, "t").unwrap();
    let s = split_semi(&d, 4, 0.2, &mut rng).unwrap();
    let all: Vec<usize> = s
        .labeled_idx
        .iter()
        .chain(&s.unlabeled_idx)
        .chain(&s.val_idx)
        .copied()
        .collect();
    assert_eq!(all.len(), 60);
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), 60);
    assert_eq!(s.val_y.len(), 10);
    for c in 0..3 {
        assert_eq!(s.labeled_y.iter().filter(|&&l| l == c).count(), 4);
    }
    assert!(matches!(
        split_semi(&d, 20, 0.2, &mut rng),
        Err(SscError::InsufficientClassCount { .. })
    ));
}

#[test]
fn checkpoints_round_trip_and_reject_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let dims = ModelDims {
        input: 5,
        hidden: vec![7, 6],
        proj_hidden: 4,
        embed: 3,
    };
    let p = init_params(&dims, 4, &mut SeededRng::new(1)).unwrap();
    let path = dir.path().join("m.bin");
    save_checkpoint(&p, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), p);
    assert!(matches!(
        load_checkpoint_matching(
            &path,
            &ModelDims {
                embed: 4,
                ..dims.clone()
            },
            4
        ),
        Err(SscError::ShapeMismatch(_))
    ));
    assert!(load_checkpoint_matching(&path, &dims, 3).is_err());

    let bytes = fs::read(&path).unwrap();
    for cut in [0, 5, 12, 40, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err(), "cut at {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    fs::write(&path, &wrong).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
