use std::fs;
use std::path::Path;

use tae_core::io::dataset::{load_dataset, DatasetError, Split};
use tae_core::io::write_image;
use tae_core::tensor::Tensor;
use tae_core::{BBox, Error};

fn write_seq(root: &Path, id: &str, frames: usize, gt: &[&str]) {
    let img = root.join(id).join("img");
    fs::create_dir_all(&img).unwrap();
    for k in 0..frames {
        let t = Tensor::full(&[3, 10, 12], 0.1 * k as f64);
        write_image(&img.join(format!("{:04}.png", k + 1)), &t).unwrap();
    }
    fs::write(root.join(id).join("groundtruth_rect.txt"), gt.join("\n")).unwrap();
}

#[test]
fn two_sequence_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_seq(dir.path(), "b", 3, &["1,1,4,4", "2,1,4,4", "3,1,4,4"]);
    write_seq(dir.path(), "a", 3, &["0\t0\t5\t5", "0,0,0,0", "1,1,5,5"]);
    fs::write(dir.path().join("a").join("attributes.txt"), "1,0,0,0,0,0,0,0,0,0,0,1").unwrap();
    let recs = load_dataset(dir.path(), Split::Test).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].id, "a");
    assert!(recs.iter().all(|r| r.boxes.len() == 3 && r.frames.len() == 3));
    assert_eq!(recs[0].boxes[1], None);
    assert_eq!(recs[1].boxes[0], Some(BBox { x: 1.0, y: 1.0, w: 4.0, h: 4.0 }));
    assert!(recs[0].has_attribute(0) && recs[0].has_attribute(11) && !recs[0].has_attribute(5));
    assert_eq!(recs[0].frame_size, (12, 10));
    let f = recs[1].load_frame(2).unwrap();
    assert_eq!(f.shape(), &[3, 10, 12]);
    assert_eq!(f.data()[0], 51.0 / 255.0);
}

#[test]
fn count_mismatch_names_sequence() {
    let dir = tempfile::tempdir().unwrap();
    write_seq(dir.path(), "walker", 5, &["1,1,4,4"; 4]);
    let e = load_dataset(dir.path(), Split::Train).unwrap_err();
    match &e {
        Error::Dataset(DatasetError::CountMismatch { seq, frames, boxes }) => {
            assert_eq!((seq.as_str(), *frames, *boxes), ("walker", 5, 4));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(e.to_string().contains("walker"));
}

#[test]
fn bad_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    write_seq(dir.path(), "s", 3, &["1,1,4,4", "1,1,x,4", "1,1,4,4"]);
    let msg = load_dataset(dir.path(), Split::Train).unwrap_err().to_string();
    assert!(msg.contains("sequence s") && msg.contains("line 2"), "{msg}");

    write_seq(dir.path(), "s", 3, &["1,1,4,4", "40,40,4,4", "1,1,4,4"]);
    let msg = load_dataset(dir.path(), Split::Train).unwrap_err().to_string();
    assert!(msg.contains("line 2") && msg.contains("outside"), "{msg}");
}

#[test]
fn split_lists_select_sequences() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["x", "y", "z"] {
        write_seq(dir.path(), id, 2, &["1,1,4,4"; 2]);
    }
    fs::write(dir.path().join("train.txt"), "z\nx\n").unwrap();
    let train = load_dataset(dir.path(), Split::Train).unwrap();
    assert_eq!(train.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["z", "x"]);
    assert!(load_dataset(dir.path(), Split::Test).unwrap().is_empty());
    fs::write(dir.path().join("test.txt"), "w\n").unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Split::Test),
        Err(Error::Dataset(DatasetError::UnknownSequence { .. }))
    ));
}

#[test]
fn missing_ground_truth_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_seq(dir.path(), "s", 2, &["1,1,4,4"; 2]);
    fs::remove_file(dir.path().join("s").join("groundtruth_rect.txt")).unwrap();
    fs::write(dir.path().join("test.txt"), "s\n").unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Split::Test),
        Err(Error::Dataset(DatasetError::MissingGroundTruth { .. }))
    ));
    fs::write(dir.path().join("s").join("img").join("0003.png"), b"not a png").unwrap();
    fs::write(dir.path().join("s").join("groundtruth_rect.txt"), "1,1,4,4\n1,1,4,4\n1,1,4,4\n").unwrap();
    let msg = load_dataset(dir.path(), Split::Test).unwrap_err().to_string();
    assert!(msg.contains("unreadable frame") && msg.contains("0003.png"), "{msg}");
}
